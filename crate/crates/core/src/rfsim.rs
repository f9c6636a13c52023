//! Synthetic frequency-hopping transmitters with hardware impairments.
//!
//! Each simulated device owns a [`DeviceProfile`]: a handful of analog
//! front-end imperfections that distort every burst it sends in the same way.
//! Those distortions are the fingerprint a downstream classifier learns.
//!
//! A burst is built in three stages:
//!
//! 1. [`clean_burst`]: a random hop sequence of QPSK sub-bursts with
//!    rectangular pulses, each mixed up to its hop channel.
//! 2. [`impair`]: nonlinearity, IQ imbalance, CFO rotation, phase noise and DC
//!    offset, always in that order.
//! 3. power normalization to unit mean power, then AWGN at the configured SNR.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::{Complex32, Complex64};
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Per-device transmitter impairments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceProfile {
    pub device_id: u16,
    /// Relative gain mismatch between the I and Q arms.
    pub gain_imbalance: f64,
    /// Quadrature phase error in radians.
    pub phase_imbalance: f64,
    pub cfo_hz: f64,
    /// Standard deviation of the per-sample Wiener phase increment, radians.
    pub phase_noise_std: f64,
    /// Coefficient of the memoryless cubic term.
    pub nonlin_coeff: f64,
    pub dc_offset: Complex64,
}

impl DeviceProfile {
    /// A transmitter without impairments.
    pub fn ideal(device_id: u16) -> Self {
        Self {
            device_id,
            gain_imbalance: 0.0,
            phase_imbalance: 0.0,
            cfo_hz: 0.0,
            phase_noise_std: 0.0,
            nonlin_coeff: 0.0,
            dc_offset: Complex64::new(0.0, 0.0),
        }
    }

    /// Impairment parameters as a flat vector (DC offset split into I and Q).
    pub fn parameter_vector(&self) -> [f64; 7] {
        [
            self.gain_imbalance,
            self.phase_imbalance,
            self.cfo_hz,
            self.phase_noise_std,
            self.nonlin_coeff,
            self.dc_offset.re,
            self.dc_offset.im,
        ]
    }
}

/// Symmetric ranges from which [`make_fleet_with`] draws impairments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpairmentRanges {
    pub gain_max: f64,
    pub phase_max: f64,
    pub cfo_max_hz: f64,
    pub phase_noise_max: f64,
    pub nonlin_max: f64,
    pub dc_max: f64,
}

impl Default for ImpairmentRanges {
    fn default() -> Self {
        Self {
            gain_max: 0.10,
            phase_max: 0.15,
            cfo_max_hz: 180e3,
            phase_noise_max: 0.02,
            nonlin_max: 0.10,
            dc_max: 0.10,
        }
    }
}

/// Draws `n` device profiles with the default impairment ranges.
pub fn make_fleet(n: usize, seed: u64) -> Result<Vec<DeviceProfile>> {
    make_fleet_with(n, seed, &ImpairmentRanges::default())
}

pub fn make_fleet_with(
    n: usize,
    seed: u64,
    ranges: &ImpairmentRanges,
) -> Result<Vec<DeviceProfile>> {
    if n < 2 {
        return Err(Error::InvalidFleet(alloc::format!(
            "need at least 2 devices, got {n}"
        )));
    }
    if n > usize::from(u16::MAX) {
        return Err(Error::InvalidFleet(alloc::format!("{n} devices exceed the label range")));
    }
    let r = ranges;
    let all = [r.gain_max, r.phase_max, r.cfo_max_hz, r.phase_noise_max, r.nonlin_max, r.dc_max];
    if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidFleet("impairment ranges must be finite and non-negative".into()));
    }
    let mut rng = stream_rng(seed, &[stream::FLEET]);
    // Each parameter is drawn from its own random permutation of n equal
    // strata, jittered within the middle of the stratum, so neighbouring
    // devices are at least 0.6 strata apart in every parameter.
    let strata = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order.into_iter().map(|k| (k as f64 + rng.random_range(0.3..0.7)) / n as f64).collect::<Vec<f64>>()
    };
    let sym = |u: f64, max: f64| (2.0 * u - 1.0) * max;
    let gain = strata(&mut rng);
    let phase = strata(&mut rng);
    let cfo = strata(&mut rng);
    let pn = strata(&mut rng);
    let nonlin = strata(&mut rng);
    let dc = strata(&mut rng);
    let mut fleet = Vec::with_capacity(n);
    for id in 0..n {
        let dc_arg = rng.random_range(-PI..PI);
        fleet.push(DeviceProfile {
            device_id: id as u16,
            gain_imbalance: sym(gain[id], r.gain_max),
            phase_imbalance: sym(phase[id], r.phase_max),
            cfo_hz: sym(cfo[id], r.cfo_max_hz),
            phase_noise_std: pn[id] * r.phase_noise_max,
            nonlin_coeff: sym(nonlin[id], r.nonlin_max),
            dc_offset: Complex64::from_polar(dc[id] * r.dc_max, dc_arg),
        });
    }
    Ok(fleet)
}

/// Burst layout and channel conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalConfig {
    pub sample_rate_hz: f64,
    pub burst_len: usize,
    pub num_channels: usize,
    pub hop_len: usize,
    pub symbol_rate_hz: f64,
    /// `f64::INFINITY` disables the noise stage.
    pub snr_db: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1e6,
            burst_len: 2048,
            num_channels: 2,
            hop_len: 128,
            symbol_rate_hz: 31.25e3,
            snr_db: 15.0,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be positive");
        }
        if self.hop_len == 0 || self.burst_len == 0 || !self.burst_len.is_multiple_of(self.hop_len) {
            return bad("burst_len must be a positive multiple of hop_len");
        }
        if self.num_channels == 0 {
            return bad("num_channels must be at least 1");
        }
        if !(self.symbol_rate_hz.is_finite()
            && self.symbol_rate_hz > 0.0
            && self.symbol_rate_hz <= self.sample_rate_hz)
        {
            return bad("symbol_rate_hz must lie in (0, sample_rate_hz]");
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("snr_db must be a number or +inf");
        }
        let half = self.sample_rate_hz / 2.0;
        if (0..self.num_channels).any(|c| self.channel_center_hz(c).abs() >= half) {
            return bad("hop centers must lie strictly inside the Nyquist band");
        }
        Ok(())
    }

    /// Center frequency of hop channel `c`; channels tile 80% of the band.
    pub fn channel_center_hz(&self, channel: usize) -> f64 {
        let n = self.num_channels as f64;
        0.8 * self.sample_rate_hz * ((channel as f64 + 0.5) / n - 0.5)
    }
}

/// One captured or synthesized burst.
#[derive(Debug, Clone, PartialEq)]
pub struct IqRecording {
    pub samples: Vec<Complex32>,
    pub sample_rate_hz: f64,
    pub device_id: u16,
    pub seed: u64,
}

/// The unimpaired hop sequence for `seed`, with unit-magnitude samples.
pub fn clean_burst(config: &SignalConfig, seed: u64) -> Result<Vec<Complex64>> {
    config.validate()?;
    let mut rng = stream_rng(seed, &[stream::HOPS]);
    let fs = config.sample_rate_hz;
    let mut out = Vec::with_capacity(config.burst_len);
    let mut symbol = Complex64::new(0.0, 0.0);
    let mut last_symbol_index = u64::MAX;
    for hop_start in (0..config.burst_len).step_by(config.hop_len) {
        let channel = rng.random_range(0..config.num_channels);
        let fc = config.channel_center_hz(channel);
        for n in hop_start..hop_start + config.hop_len {
            let t = n as f64 / fs;
            let symbol_index = Float::floor(t * config.symbol_rate_hz + 1e-9) as u64;
            if symbol_index != last_symbol_index || n == hop_start {
                let i = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let q = if rng.random::<bool>() { 1.0 } else { -1.0 };
                symbol = Complex64::new(i * FRAC_1_SQRT_2, q * FRAC_1_SQRT_2);
                last_symbol_index = symbol_index;
            }
            out.push(symbol * Complex64::from_polar(1.0, 2.0 * PI * fc * t));
        }
    }
    Ok(out)
}

/// Applies the device impairment chain in place.
///
/// Order: cubic nonlinearity, IQ imbalance, CFO rotation, Wiener phase noise,
/// DC offset. A zero profile leaves `samples` untouched.
pub fn impair(profile: &DeviceProfile, sample_rate_hz: f64, samples: &mut [Complex64], seed: u64) {
    let p = profile;
    if p.nonlin_coeff != 0.0 {
        for x in samples.iter_mut() {
            *x += *x * (p.nonlin_coeff * x.norm_sqr());
        }
    }
    if p.gain_imbalance != 0.0 || p.phase_imbalance != 0.0 {
        let rot = Complex64::from_polar(1.0 + p.gain_imbalance, p.phase_imbalance);
        let mu = (Complex64::new(1.0, 0.0) + rot) * 0.5;
        let nu = (Complex64::new(1.0, 0.0) - rot) * 0.5;
        for x in samples.iter_mut() {
            *x = mu * *x + nu * x.conj();
        }
    }
    if p.cfo_hz != 0.0 {
        let w = 2.0 * PI * p.cfo_hz / sample_rate_hz;
        for (n, x) in samples.iter_mut().enumerate() {
            *x *= Complex64::from_polar(1.0, w * n as f64);
        }
    }
    if p.phase_noise_std > 0.0 {
        let mut rng = stream_rng(seed, &[stream::PHASE_NOISE]);
        let step = Normal::new(0.0, p.phase_noise_std).expect("positive std");
        let mut theta = 0.0;
        for x in samples.iter_mut() {
            theta += step.sample(&mut rng);
            *x *= Complex64::from_polar(1.0, theta);
        }
    }
    if p.dc_offset != Complex64::new(0.0, 0.0) {
        for x in samples.iter_mut() {
            *x += p.dc_offset;
        }
    }
}

/// Scales `samples` to unit mean power. All-zero input is left alone.
pub fn normalize_power(samples: &mut [Complex64]) {
    if samples.is_empty() {
        return;
    }
    let power = samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / samples.len() as f64;
    if power > 0.0 && power.is_finite() {
        let scale = 1.0 / Float::sqrt(power);
        for x in samples.iter_mut() {
            *x *= scale;
        }
    }
}

/// Impaired, power-normalized burst before noise is added.
pub fn impaired_burst(
    profile: &DeviceProfile,
    config: &SignalConfig,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let mut samples = clean_burst(config, seed)?;
    impair(profile, config.sample_rate_hz, &mut samples, seed);
    normalize_power(&mut samples);
    Ok(samples)
}

/// Adds circular complex Gaussian noise at `snr_db` relative to unit power.
pub fn add_awgn(samples: &mut [Complex64], snr_db: f64, seed: u64) {
    if snr_db == f64::INFINITY {
        return;
    }
    let variance = Float::powf(10.0, -snr_db / 10.0);
    let noise = Normal::new(0.0, Float::sqrt(variance / 2.0)).expect("finite variance");
    let mut rng = stream_rng(seed, &[stream::AWGN]);
    for x in samples.iter_mut() {
        *x += Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
    }
}

/// Synthesizes one recording for `profile`. Deterministic in its arguments.
pub fn synth_burst(profile: &DeviceProfile, config: &SignalConfig, seed: u64) -> Result<IqRecording> {
    let mut samples = impaired_burst(profile, config, seed)?;
    add_awgn(&mut samples, config.snr_db, seed);
    Ok(IqRecording {
        samples: samples
            .iter()
            .map(|x| Complex32::new(x.re as f32, x.im as f32))
            .collect(),
        sample_rate_hz: config.sample_rate_hz,
        device_id: profile.device_id,
        seed,
    })
}
