//! IQ bursts to normalized spectrogram images, and dataset splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Float;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::fft::fft;
use crate::rfsim::IqRecording;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => alloc::vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * Float::cos(2.0 * PI * i as f64 / n as f64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturizeConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    pub window: Window,
    /// Side length H of the square output image.
    pub out_size: usize,
    pub log_magnitude: bool,
    pub eps: f64,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self {
            fft_size: 64,
            hop_size: 32,
            window: Window::Hann,
            out_size: 32,
            log_magnitude: true,
            eps: 1e-10,
        }
    }
}

impl FeaturizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.hop_size == 0 || self.hop_size > self.fft_size {
            return Err(Error::Config("need 0 < hop_size <= fft_size".into()));
        }
        if self.out_size < 8 {
            return Err(Error::Config("out_size must be at least 8".into()));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config("eps must be a small positive number".into()));
        }
        Ok(())
    }
}

/// Complex STFT, frequency along rows (zero frequency centered), frames along
/// columns. Row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequency {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl TimeFrequency {
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    /// Row holding DFT bin `bin` after the FFT shift.
    pub fn row_of_bin(&self, bin: usize) -> usize {
        (bin + self.rows / 2) % self.rows
    }
}

pub fn frame_count(len: usize, cfg: &FeaturizeConfig) -> usize {
    (len - cfg.fft_size) / cfg.hop_size + 1
}

/// Short-time Fourier transform of a recording.
pub fn stft(rec: &IqRecording, cfg: &FeaturizeConfig) -> Result<TimeFrequency> {
    let samples: Vec<Complex64> = rec
        .samples
        .iter()
        .map(|c| Complex64::new(f64::from(c.re), f64::from(c.im)))
        .collect();
    stft_samples(&samples, cfg)
}

pub fn stft_samples(samples: &[Complex64], cfg: &FeaturizeConfig) -> Result<TimeFrequency> {
    cfg.validate()?;
    if samples.len() < cfg.fft_size {
        return Err(Error::InputTooShort { needed: cfg.fft_size, got: samples.len() });
    }
    let n = cfg.fft_size;
    let cols = frame_count(samples.len(), cfg);
    let window = cfg.window.coefficients(n);
    let mut data = alloc::vec![Complex64::new(0.0, 0.0); n * cols];
    let mut frame = Vec::with_capacity(n);
    for col in 0..cols {
        let start = col * cfg.hop_size;
        frame.clear();
        frame.extend(samples[start..start + n].iter().zip(&window).map(|(x, w)| x * *w));
        let spectrum = fft(&frame);
        for (bin, v) in spectrum.into_iter().enumerate() {
            let row = (bin + n / 2) % n;
            data[row * cols + col] = v;
        }
    }
    Ok(TimeFrequency { rows: n, cols, data })
}

/// Normalized H×H image with its device label.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major, `size * size` values in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub size: usize,
    pub label: u16,
    pub source_seed: u64,
}

/// Bilinear resize with corner alignment. Resizing to the same shape is exact.
pub fn resize_bilinear(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0.0);
        }
        let pos = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
        let lo = (Float::floor(pos) as usize).min(n_in - 1);
        (lo, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let (r0, fr) = coord(r, rows, out_rows);
        let r1 = (r0 + 1).min(rows - 1);
        for c in 0..out_cols {
            let (c0, fc) = coord(c, cols, out_cols);
            let c1 = (c0 + 1).min(cols - 1);
            let top = lerp(src[r0 * cols + c0], src[r0 * cols + c1], fc);
            let bottom = lerp(src[r1 * cols + c0], src[r1 * cols + c1], fc);
            out.push(lerp(top, bottom, fr));
        }
    }
    out
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Min-max normalizes `values` to `[0, 1]`; a constant input becomes all 0.5.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0 && span.is_finite()) {
        values.iter_mut().for_each(|v| *v = 0.5);
        return;
    }
    for v in values.iter_mut() {
        *v = ((*v - lo) / span).clamp(0.0, 1.0);
    }
}

/// Magnitude (optionally in dB), resized to H×H, then min-max normalized.
pub fn to_spectrogram(tf: &TimeFrequency, cfg: &FeaturizeConfig, label: u16, source_seed: u64) -> Result<Spectrogram> {
    if tf.rows == 0 || tf.cols == 0 {
        return Err(Error::Data("empty time-frequency matrix".into()));
    }
    let mags: Vec<f64> = tf
        .data
        .iter()
        .map(|z| {
            let m = z.norm();
            let v = if cfg.log_magnitude { 20.0 * Float::log10(m + cfg.eps) } else { m };
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .collect();
    let h = cfg.out_size;
    let mut img = resize_bilinear(&mags, tf.rows, tf.cols, h, h);
    min_max_normalize(&mut img);
    Ok(Spectrogram {
        pixels: img.into_iter().map(|v| v as f32).collect(),
        size: h,
        label,
        source_seed,
    })
}

pub fn featurize(rec: &IqRecording, cfg: &FeaturizeConfig) -> Result<Spectrogram> {
    to_spectrogram(&stft(rec, cfg)?, cfg, rec.device_id, rec.seed)
}

/// Train/test samples plus the forget/retain partition of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Spectrogram>,
    pub test: Vec<Spectrogram>,
    pub forget_labels: BTreeSet<u16>,
}

impl DatasetSplit {
    /// Assembles a split from already featurized samples.
    pub fn from_parts(train: Vec<Spectrogram>, test: Vec<Spectrogram>, forget_labels: BTreeSet<u16>) -> Result<Self> {
        let train_seeds: BTreeSet<u64> = train.iter().map(|s| s.source_seed).collect();
        if test.iter().any(|s| train_seeds.contains(&s.source_seed)) {
            return Err(Error::Data("train and test share a source recording".into()));
        }
        let split = Self { train, test, forget_labels: BTreeSet::new() };
        split.with_forget_labels(forget_labels)
    }

    /// Same samples, different forget target.
    pub fn with_forget_labels(mut self, forget_labels: BTreeSet<u16>) -> Result<Self> {
        let labels = self.labels();
        if let Some(bad) = forget_labels.iter().find(|l| !labels.contains(l)) {
            return Err(Error::Label(format!("unknown forget label {bad}")));
        }
        self.forget_labels = forget_labels;
        Ok(self)
    }

    pub fn retarget(&self, forget_labels: &BTreeSet<u16>) -> Result<Self> {
        self.clone().with_forget_labels(forget_labels.clone())
    }

    pub fn labels(&self) -> BTreeSet<u16> {
        self.train.iter().chain(&self.test).map(|s| s.label).collect()
    }

    /// Number of output classes: one past the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels().last().map_or(0, |&l| usize::from(l) + 1)
    }

    pub fn input_size(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |s| s.size)
    }

    /// Training samples of forgotten devices.
    pub fn forget_set(&self) -> Vec<&Spectrogram> {
        self.train.iter().filter(|s| self.forget_labels.contains(&s.label)).collect()
    }

    /// Training samples of retained devices.
    pub fn retain_set(&self) -> Vec<&Spectrogram> {
        self.train.iter().filter(|s| !self.forget_labels.contains(&s.label)).collect()
    }

    pub fn test_forget(&self) -> Vec<&Spectrogram> {
        self.test.iter().filter(|s| self.forget_labels.contains(&s.label)).collect()
    }

    pub fn test_retain(&self) -> Vec<&Spectrogram> {
        self.test.iter().filter(|s| !self.forget_labels.contains(&s.label)).collect()
    }
}

/// Featurizes `recordings` and splits them per label into train and test.
pub fn build_dataset(
    recordings: &[IqRecording],
    cfg: &FeaturizeConfig,
    test_fraction: f64,
    forget_labels: &BTreeSet<u16>,
    seed: u64,
) -> Result<DatasetSplit> {
    cfg.validate()?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
    }
    let mut by_label: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, r) in recordings.iter().enumerate() {
        by_label.entry(r.device_id).or_default().push(i);
    }
    if let Some(bad) = forget_labels.iter().find(|l| !by_label.contains_key(l)) {
        return Err(Error::Label(format!("unknown forget label {bad}")));
    }
    let seeds: BTreeSet<u64> = recordings.iter().map(|r| r.seed).collect();
    if seeds.len() != recordings.len() {
        return Err(Error::Data("recording seeds must be unique".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (&label, indices) in &by_label {
        if indices.len() < 2 {
            return Err(Error::Data(format!("label {label} has fewer than 2 recordings")));
        }
        let mut order = indices.clone();
        order.shuffle(&mut stream_rng(seed, &[stream::SPLIT, u64::from(label)]));
        let n_test = Float::round(order.len() as f64 * test_fraction) as usize;
        let n_test = n_test.clamp(1, order.len() - 1);
        for (k, &i) in order.iter().enumerate() {
            let s = featurize(&recordings[i], cfg)?;
            if k < n_test {
                test.push(s);
            } else {
                train.push(s);
            }
        }
    }
    DatasetSplit::from_parts(train, test, forget_labels.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfsim::{make_fleet, synth_burst, SignalConfig};
    use num_complex::Complex32;
    use proptest::prelude::*;

    fn rect(fft_size: usize, hop: usize) -> FeaturizeConfig {
        FeaturizeConfig { fft_size, hop_size: hop, window: Window::Rectangular, ..FeaturizeConfig::default() }
    }

    #[test]
    fn zero_signal_gives_zero_matrix() {
        let tf = stft_samples(&vec![Complex64::new(0.0, 0.0); 256], &FeaturizeConfig::default()).unwrap();
        assert_eq!(tf.cols, frame_count(256, &FeaturizeConfig::default()));
        assert!(tf.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        let cfg = FeaturizeConfig::default();
        let tf = stft_samples(&vec![Complex64::new(1.0, 0.0); 2048], &cfg).unwrap();
        assert_eq!(tf.cols, (2048 - 64) / 32 + 1);
        assert_eq!(tf.rows, 64);
    }

    #[test]
    fn bin_centered_tone_lands_in_one_row() {
        let cfg = rect(64, 16);
        let k = 5;
        let x: Vec<Complex64> = (0..512)
            .map(|n| Complex64::from_polar(1.0, 2.0 * PI * (k * n) as f64 / 64.0))
            .collect();
        let tf = stft_samples(&x, &cfg).unwrap();
        let row = tf.row_of_bin(k);
        for col in 0..tf.cols {
            for r in 0..tf.rows {
                let e = tf.at(r, col).norm_sqr();
                if r == row {
                    assert!((e - 64.0 * 64.0).abs() < 1e-6);
                } else {
                    assert!(e < 1e-12);
                }
            }
        }
    }

    #[test]
    fn energy_matches_direct_sum_with_rectangular_tiling() {
        // Direct summation oracle: Parseval over non-overlapping frames.
        let cfg = rect(64, 64);
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x: Vec<Complex64> = (0..640).map(|_| Complex64::new(next(), next())).collect();
        let signal_energy: f64 = x.iter().map(|z| z.re * z.re + z.im * z.im).sum();
        let tf = stft_samples(&x, &cfg).unwrap();
        let tf_energy: f64 = tf.data.iter().map(|z| z.norm_sqr()).sum();
        assert!((tf_energy - 64.0 * signal_energy).abs() < 1e-9 * tf_energy);
    }

    #[test]
    fn short_input_is_rejected() {
        let err = stft_samples(&[Complex64::new(0.0, 0.0); 10], &FeaturizeConfig::default()).unwrap_err();
        assert_eq!(err, Error::InputTooShort { needed: 64, got: 10 });
    }

    #[test]
    fn constant_matrix_normalizes_to_half() {
        let tf = TimeFrequency { rows: 4, cols: 4, data: vec![Complex64::new(3.0, 0.0); 16] };
        let s = to_spectrogram(&tf, &FeaturizeConfig { out_size: 8, ..FeaturizeConfig::default() }, 0, 0).unwrap();
        assert!(s.pixels.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn non_constant_matrix_spans_unit_interval() {
        let data = (0..40).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let tf = TimeFrequency { rows: 5, cols: 8, data };
        let s = to_spectrogram(&tf, &FeaturizeConfig::default(), 0, 0).unwrap();
        let lo = s.pixels.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = s.pixels.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let src: Vec<f64> = (0..32 * 32).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        assert_eq!(resize_bilinear(&src, 32, 32, 32, 32), src);
    }

    proptest! {
        #[test]
        fn pixels_stay_in_unit_interval(
            values in proptest::collection::vec((-1e6f32..1e6, -1e6f32..1e6), 64..300),
            log in any::<bool>(),
        ) {
            let rec = IqRecording {
                samples: values.iter().map(|&(a, b)| Complex32::new(a, b)).collect(),
                sample_rate_hz: 1.0,
                device_id: 0,
                seed: 0,
            };
            let cfg = FeaturizeConfig { log_magnitude: log, ..FeaturizeConfig::default() };
            let s = featurize(&rec, &cfg).unwrap();
            prop_assert_eq!(s.pixels.len(), 32 * 32);
            prop_assert!(s.pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
        }
    }

    fn recordings(labels: u16, per_label: u64) -> Vec<IqRecording> {
        let cfg = SignalConfig { burst_len: 512, ..SignalConfig::default() };
        let fleet = make_fleet(usize::from(labels), 2).unwrap();
        let mut out = Vec::new();
        for p in &fleet {
            for j in 0..per_label {
                out.push(synth_burst(p, &cfg, u64::from(p.device_id) * 10_000 + j).unwrap());
            }
        }
        out
    }

    #[test]
    fn stratified_split_counts() {
        let recs = recordings(10, 100);
        let split = build_dataset(&recs, &FeaturizeConfig::default(), 0.2, &BTreeSet::from([3]), 1).unwrap();
        assert_eq!(split.train.len(), 800);
        assert_eq!(split.test.len(), 200);
        for l in 0..10 {
            assert_eq!(split.train.iter().filter(|s| s.label == l).count(), 80);
            assert_eq!(split.test.iter().filter(|s| s.label == l).count(), 20);
        }
        assert!(split.forget_set().iter().all(|s| s.label == 3));
        assert!(split.retain_set().iter().all(|s| s.label != 3));
        assert_eq!(split.forget_set().len() + split.retain_set().len(), split.train.len());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let recs = recordings(3, 10);
        let a = build_dataset(&recs, &FeaturizeConfig::default(), 0.3, &BTreeSet::new(), 5).unwrap();
        let b = build_dataset(&recs, &FeaturizeConfig::default(), 0.3, &BTreeSet::new(), 5).unwrap();
        assert_eq!(a, b);
        let train: BTreeSet<u64> = a.train.iter().map(|s| s.source_seed).collect();
        assert!(a.test.iter().all(|s| !train.contains(&s.source_seed)));
    }

    #[test]
    fn unknown_forget_label_is_rejected() {
        let recs = recordings(3, 4);
        let err = build_dataset(&recs, &FeaturizeConfig::default(), 0.5, &BTreeSet::from([7]), 0).unwrap_err();
        assert!(matches!(err, Error::Label(_)));
    }

    #[test]
    fn single_recording_label_is_rejected() {
        let recs = recordings(2, 1);
        assert!(matches!(
            build_dataset(&recs, &FeaturizeConfig::default(), 0.5, &BTreeSet::new(), 0),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn forget_and_retain_partition_train(mask in 0u16..8) {
            let recs = recordings(3, 4);
            let base = build_dataset(&recs, &FeaturizeConfig::default(), 0.25, &BTreeSet::new(), 3).unwrap();
            let labels: BTreeSet<u16> = (0..3).filter(|l| mask & (1 << l) != 0).collect();
            let split = base.retarget(&labels).unwrap();
            prop_assert_eq!(split.forget_set().len() + split.retain_set().len(), split.train.len());
        }
    }
}
