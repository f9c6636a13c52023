//! Experiment configuration in a flat `section.key = value` text format.
//!
//! Lines starting with `#` are comments. Every key is typed, unknown keys
//! and repeated keys are errors, and [`ExperimentConfig::render`] writes a
//! text that parses back to the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rfunlearn_core::featurize::{FeaturizeConfig, Window};
use rfunlearn_core::rfsim::{ImpairmentRanges, SignalConfig};
use rfunlearn_core::rng::derive_seed;
use rfunlearn_core::tinynet::ArchSpec;
use rfunlearn_core::trainer::TrainConfig;
use rfunlearn_core::unlearn::{BatchMode, UnlearnConfig};

use crate::error::{Error, Result};

/// Seed tags mixed into the master seed when a component seed is not given.
mod tag {
    pub const FLEET: u64 = 0x101;
    pub const RECORDINGS: u64 = 0x102;
    pub const SPLIT: u64 = 0x103;
    pub const TRAIN: u64 = 0x104;
    pub const UNLEARN: u64 = 0x105;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassOverride {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub lr: Option<f64>,
}

impl ClassOverride {
    fn apply(&self, base: &UnlearnConfig) -> UnlearnConfig {
        UnlearnConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
            gamma: self.gamma.unwrap_or(base.gamma),
            tau: self.tau.unwrap_or(base.tau),
            lr: self.lr.unwrap_or(base.lr),
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed; component seeds derive from it unless set explicitly.
    pub seed: u64,
    pub fleet_n: usize,
    pub fleet_seed: Option<u64>,
    pub recordings_per_device: usize,
    pub ranges: ImpairmentRanges,
    pub signal: SignalConfig,
    pub featurize: FeaturizeConfig,
    pub test_fraction: f64,
    pub split_seed: Option<u64>,
    pub train: TrainConfig,
    pub train_seed: Option<u64>,
    /// Layer list; the default architecture when unset.
    pub arch: Option<String>,
    pub unlearn: UnlearnConfig,
    pub unlearn_seed: Option<u64>,
    pub class_overrides: BTreeMap<u16, ClassOverride>,
    /// Optimizer settings for coefficient (combined-vector) unlearning.
    pub comv: UnlearnConfig,
    pub workdir: Option<PathBuf>,
    pub manifest: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            fleet_n: 6,
            fleet_seed: None,
            recordings_per_device: 250,
            ranges: ImpairmentRanges::default(),
            signal: SignalConfig::default(),
            featurize: FeaturizeConfig::default(),
            test_fraction: 0.2,
            split_seed: None,
            train: TrainConfig::default(),
            train_seed: None,
            arch: None,
            unlearn: UnlearnConfig::default(),
            unlearn_seed: None,
            class_overrides: BTreeMap::new(),
            comv: UnlearnConfig { alpha: 1.0, beta: 8.0, gamma: 1.0, ..UnlearnConfig::default() },
            workdir: None,
            manifest: "manifest.json".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_window(key: &str, value: &str) -> Result<Window> {
    match value {
        "hann" => Ok(Window::Hann),
        "rectangular" => Ok(Window::Rectangular),
        _ => Err(Error::Config(format!("{key}: expected hann or rectangular, got {value:?}"))),
    }
}

fn parse_mode(key: &str, value: &str) -> Result<BatchMode> {
    match value {
        "shuffled" => Ok(BatchMode::Shuffled),
        "fixed" => Ok(BatchMode::Fixed),
        _ => Err(Error::Config(format!("{key}: expected shuffled or fixed, got {value:?}"))),
    }
}

fn window_name(w: Window) -> &'static str {
    match w {
        Window::Hann => "hann",
        Window::Rectangular => "rectangular",
    }
}

fn mode_name(m: BatchMode) -> &'static str {
    match m {
        BatchMode::Shuffled => "shuffled",
        BatchMode::Fixed => "fixed",
    }
}

fn set_unlearn(c: &mut UnlearnConfig, field: &str, key: &str, value: &str) -> Result<bool> {
    match field {
        "alpha" => c.alpha = parse(key, value)?,
        "beta" => c.beta = parse(key, value)?,
        "gamma" => c.gamma = parse(key, value)?,
        "tau" => c.tau = parse(key, value)?,
        "lr" => c.lr = parse(key, value)?,
        "batch_size" => c.batch_size = parse(key, value)?,
        "max_epochs" => c.max_epochs = parse(key, value)?,
        "th_ua" => c.th_ua = parse(key, value)?,
        "th_ra" => c.th_ra = parse(key, value)?,
        "eval_every" => c.eval_every = parse(key, value)?,
        "batch_mode" => c.batch_mode = parse_mode(key, value)?,
        "stop_on_threshold" => c.stop_on_threshold = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn render_unlearn(out: &mut String, prefix: &str, c: &UnlearnConfig) {
    let _ = writeln!(out, "{prefix}.alpha = {:?}", c.alpha);
    let _ = writeln!(out, "{prefix}.beta = {:?}", c.beta);
    let _ = writeln!(out, "{prefix}.gamma = {:?}", c.gamma);
    let _ = writeln!(out, "{prefix}.tau = {:?}", c.tau);
    let _ = writeln!(out, "{prefix}.lr = {:?}", c.lr);
    let _ = writeln!(out, "{prefix}.batch_size = {}", c.batch_size);
    let _ = writeln!(out, "{prefix}.max_epochs = {}", c.max_epochs);
    let _ = writeln!(out, "{prefix}.th_ua = {:?}", c.th_ua);
    let _ = writeln!(out, "{prefix}.th_ra = {:?}", c.th_ra);
    let _ = writeln!(out, "{prefix}.eval_every = {}", c.eval_every);
    let _ = writeln!(out, "{prefix}.batch_mode = {}", mode_name(c.batch_mode));
    let _ = writeln!(out, "{prefix}.stop_on_threshold = {}", c.stop_on_threshold);
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} is set twice", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r = &mut self.ranges;
        let s = &mut self.signal;
        let f = &mut self.featurize;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "fleet.n" => self.fleet_n = parse(key, value)?,
            "fleet.seed" => self.fleet_seed = Some(parse(key, value)?),
            "fleet.recordings_per_device" => self.recordings_per_device = parse(key, value)?,
            "fleet.gain_max" => r.gain_max = parse(key, value)?,
            "fleet.phase_max" => r.phase_max = parse(key, value)?,
            "fleet.cfo_max_hz" => r.cfo_max_hz = parse(key, value)?,
            "fleet.phase_noise_max" => r.phase_noise_max = parse(key, value)?,
            "fleet.nonlin_max" => r.nonlin_max = parse(key, value)?,
            "fleet.dc_max" => r.dc_max = parse(key, value)?,
            "signal.sample_rate_hz" => s.sample_rate_hz = parse(key, value)?,
            "signal.burst_len" => s.burst_len = parse(key, value)?,
            "signal.num_channels" => s.num_channels = parse(key, value)?,
            "signal.hop_len" => s.hop_len = parse(key, value)?,
            "signal.symbol_rate_hz" => s.symbol_rate_hz = parse(key, value)?,
            "signal.snr_db" => s.snr_db = parse(key, value)?,
            "featurize.fft_size" => f.fft_size = parse(key, value)?,
            "featurize.hop_size" => f.hop_size = parse(key, value)?,
            "featurize.window" => f.window = parse_window(key, value)?,
            "featurize.out_size" => f.out_size = parse(key, value)?,
            "featurize.log_magnitude" => f.log_magnitude = parse(key, value)?,
            "featurize.eps" => f.eps = parse(key, value)?,
            "split.test_fraction" => self.test_fraction = parse(key, value)?,
            "split.seed" => self.split_seed = Some(parse(key, value)?),
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.shuffle" => self.train.shuffle = parse(key, value)?,
            "train.seed" => self.train_seed = Some(parse(key, value)?),
            "train.arch" => self.arch = Some(value.to_string()),
            "unlearn.seed" => self.unlearn_seed = Some(parse(key, value)?),
            "paths.workdir" => self.workdir = Some(PathBuf::from(value)),
            "paths.manifest" => self.manifest = value.to_string(),
            _ => {
                if let Some(rest) = key.strip_prefix("unlearn.class.") {
                    return self.set_override(key, rest, value);
                }
                let known = match key.split_once('.') {
                    Some(("unlearn", field)) => set_unlearn(&mut self.unlearn, field, key, value)?,
                    Some(("comv", field)) => set_unlearn(&mut self.comv, field, key, value)?,
                    _ => false,
                };
                if !known {
                    return Err(Error::Config(format!("unknown key {key}")));
                }
            }
        }
        Ok(())
    }

    fn set_override(&mut self, key: &str, rest: &str, value: &str) -> Result<()> {
        let (id, field) = rest
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("{key}: expected unlearn.class.<id>.<field>")))?;
        let id: u16 = parse(key, id)?;
        let o = self.class_overrides.entry(id).or_default();
        let v: f64 = parse(key, value)?;
        match field {
            "alpha" => o.alpha = Some(v),
            "beta" => o.beta = Some(v),
            "gamma" => o.gamma = Some(v),
            "tau" => o.tau = Some(v),
            "lr" => o.lr = Some(v),
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.fleet_n < 2 || self.fleet_n > usize::from(u16::MAX) {
            return Err(Error::Config("fleet.n must lie in [2, 65535]".into()));
        }
        if self.recordings_per_device < 2 {
            return Err(Error::Config("fleet.recordings_per_device must be at least 2".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("split.test_fraction must lie in (0, 1)".into()));
        }
        self.signal.validate()?;
        self.featurize.validate()?;
        self.train_config().validate()?;
        self.unlearn.validate()?;
        self.comv.validate()?;
        if let Some(&id) = self.class_overrides.keys().find(|&&id| usize::from(id) >= self.fleet_n) {
            return Err(Error::Config(format!("override for class {id}, but the fleet has {} devices", self.fleet_n)));
        }
        for id in self.class_overrides.keys() {
            self.unlearn_for(*id).validate()?;
        }
        self.arch_spec()?;
        Ok(())
    }

    pub fn fleet_seed(&self) -> u64 {
        self.fleet_seed.unwrap_or_else(|| derive_seed(self.seed, &[tag::FLEET]))
    }

    /// Seed of recording `k` of device `id`.
    pub fn recording_seed(&self, id: u16, k: usize) -> u64 {
        derive_seed(self.fleet_seed(), &[tag::RECORDINGS, u64::from(id), k as u64])
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or_else(|| derive_seed(self.seed, &[tag::SPLIT]))
    }

    pub fn unlearn_seed(&self) -> u64 {
        self.unlearn_seed.unwrap_or_else(|| derive_seed(self.seed, &[tag::UNLEARN]))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.train_seed.unwrap_or_else(|| derive_seed(self.seed, &[tag::TRAIN])), ..self.train }
    }

    pub fn arch_spec(&self) -> Result<ArchSpec> {
        let size = self.featurize.out_size;
        Ok(match &self.arch {
            Some(text) => ArchSpec::parse(size, text)?,
            None => ArchSpec::default_for(size, self.fleet_n)?,
        })
    }

    /// Unlearning settings for class `id` with its overrides applied.
    pub fn unlearn_for(&self, id: u16) -> UnlearnConfig {
        self.class_overrides.get(&id).map_or(self.unlearn, |o| o.apply(&self.unlearn))
    }

    /// Every setting as parseable text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let r = &self.ranges;
        let s = &self.signal;
        let f = &self.featurize;
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "fleet.n = {}", self.fleet_n);
        if let Some(v) = self.fleet_seed {
            let _ = writeln!(w, "fleet.seed = {v}");
        }
        let _ = writeln!(w, "fleet.recordings_per_device = {}", self.recordings_per_device);
        let _ = writeln!(w, "fleet.gain_max = {:?}", r.gain_max);
        let _ = writeln!(w, "fleet.phase_max = {:?}", r.phase_max);
        let _ = writeln!(w, "fleet.cfo_max_hz = {:?}", r.cfo_max_hz);
        let _ = writeln!(w, "fleet.phase_noise_max = {:?}", r.phase_noise_max);
        let _ = writeln!(w, "fleet.nonlin_max = {:?}", r.nonlin_max);
        let _ = writeln!(w, "fleet.dc_max = {:?}", r.dc_max);
        let _ = writeln!(w, "signal.sample_rate_hz = {:?}", s.sample_rate_hz);
        let _ = writeln!(w, "signal.burst_len = {}", s.burst_len);
        let _ = writeln!(w, "signal.num_channels = {}", s.num_channels);
        let _ = writeln!(w, "signal.hop_len = {}", s.hop_len);
        let _ = writeln!(w, "signal.symbol_rate_hz = {:?}", s.symbol_rate_hz);
        let _ = writeln!(w, "signal.snr_db = {:?}", s.snr_db);
        let _ = writeln!(w, "featurize.fft_size = {}", f.fft_size);
        let _ = writeln!(w, "featurize.hop_size = {}", f.hop_size);
        let _ = writeln!(w, "featurize.window = {}", window_name(f.window));
        let _ = writeln!(w, "featurize.out_size = {}", f.out_size);
        let _ = writeln!(w, "featurize.log_magnitude = {}", f.log_magnitude);
        let _ = writeln!(w, "featurize.eps = {:?}", f.eps);
        let _ = writeln!(w, "split.test_fraction = {:?}", self.test_fraction);
        if let Some(v) = self.split_seed {
            let _ = writeln!(w, "split.seed = {v}");
        }
        let _ = writeln!(w, "train.epochs = {}", self.train.epochs);
        let _ = writeln!(w, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(w, "train.lr = {:?}", self.train.lr);
        let _ = writeln!(w, "train.shuffle = {}", self.train.shuffle);
        if let Some(v) = self.train_seed {
            let _ = writeln!(w, "train.seed = {v}");
        }
        if let Some(a) = &self.arch {
            let _ = writeln!(w, "train.arch = {a}");
        }
        render_unlearn(w, "unlearn", &self.unlearn);
        if let Some(v) = self.unlearn_seed {
            let _ = writeln!(w, "unlearn.seed = {v}");
        }
        for (id, o) in &self.class_overrides {
            for (name, v) in [("alpha", o.alpha), ("beta", o.beta), ("gamma", o.gamma), ("tau", o.tau), ("lr", o.lr)] {
                if let Some(v) = v {
                    let _ = writeln!(w, "unlearn.class.{id}.{name} = {v:?}");
                }
            }
        }
        render_unlearn(w, "comv", &self.comv);
        if let Some(p) = &self.workdir {
            let _ = writeln!(w, "paths.workdir = {}", p.display());
        }
        let _ = writeln!(w, "paths.manifest = {}", self.manifest);
        out
    }
}
