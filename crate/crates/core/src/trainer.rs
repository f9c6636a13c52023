//! Mini-batch SGD for the original classifier and the retrain baseline.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::featurize::{DatasetSplit, Spectrogram};
use crate::rng::{stream, stream_rng};
use crate::tinynet::{backward, sgd_step, ArchSpec, LossKind, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 15, batch_size: 32, lr: 0.05, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub test_accuracy: f64,
    /// Labels that contributed training samples.
    pub trained_labels: BTreeSet<u16>,
}

/// Trains a fresh model on every training sample of `dataset`.
pub fn train(dataset: &DatasetSplit, arch: &ArchSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let samples: Vec<&Spectrogram> = dataset.train.iter().collect();
    fit(&samples, &dataset.test, arch, cfg)
}

/// Trains a fresh model on the retained classes only. The output layer keeps
/// one logit per class; forgotten classes simply never appear as targets.
pub fn retrain_excluding(
    dataset: &DatasetSplit,
    forget: &BTreeSet<u16>,
    arch: &ArchSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let known = dataset.labels();
    if let Some(bad) = forget.iter().find(|l| !known.contains(l)) {
        return Err(Error::Label(alloc::format!("unknown forget label {bad}")));
    }
    let samples: Vec<&Spectrogram> = dataset.train.iter().filter(|s| !forget.contains(&s.label)).collect();
    if samples.is_empty() {
        return Err(Error::Data("every training label is being forgotten".into()));
    }
    assert!(samples.iter().all(|s| !forget.contains(&s.label)));
    fit(&samples, &dataset.test, arch, cfg)
}

fn fit(samples: &[&Spectrogram], test: &[Spectrogram], arch: &ArchSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let pixels = arch.input_size() * arch.input_size();
    if let Some(s) = samples.iter().copied().chain(test).find(|s| s.pixels.len() != pixels) {
        return Err(Error::Shape { expected: pixels, got: s.pixels.len() });
    }
    let mut params = ModelParams::init(arch, cfg.seed);
    let lr = cfg.lr as f32;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let test_refs: Vec<&Spectrogram> = test.iter().collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut stream_rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        }
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f32]> = chunk.iter().map(|&i| samples[i].pixels.as_slice()).collect();
            let labels: Vec<u16> = chunk.iter().map(|&i| samples[i].label).collect();
            let g = backward(&params, &inputs, &labels, LossKind::CrossEntropy)?;
            loss_sum += f64::from(g.loss) * chunk.len() as f64;
            sgd_step(&mut params, &g.param_grads, lr)?;
        }
        if !params.is_finite() {
            return Err(Error::Data(alloc::format!("training diverged in epoch {epoch}")));
        }
        let test_acc = if test_refs.is_empty() { f64::NAN } else { accuracy(&params, &test_refs, None)? };
        log.push(EpochLog { epoch, train_loss: loss_sum / samples.len() as f64, test_acc });
    }
    let test_accuracy = log.last().map_or(f64::NAN, |l| l.test_acc);
    let trained_labels = samples.iter().map(|s| s.label).collect();
    Ok(TrainOutcome { params, log, test_accuracy, trained_labels })
}
