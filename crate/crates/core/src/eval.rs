//! Accuracy under a perturbation, entropy membership inference, Grad-CAM and
//! wall-clock timing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::featurize::{min_max_normalize, resize_bilinear, Spectrogram};
use crate::tinynet::{backprop, forward_traced, softmax, BackpropRequest, LayerSpec, ModelParams, Shape};
use crate::unlearn::add_delta;

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: PartialOrd>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Logits of `x + delta` (or of `x` when no delta is given).
pub fn logits(params: &ModelParams, x: &[f32], delta: Option<&[f32]>) -> Result<Vec<f32>> {
    let input = add_delta(x, delta)?;
    Ok(forward_traced(params, &input)?.logits().to_vec())
}

pub fn predict(params: &ModelParams, x: &[f32], delta: Option<&[f32]>) -> Result<usize> {
    Ok(argmax(&logits(params, x, delta)?))
}

/// Fraction of `samples` classified correctly.
pub fn accuracy(params: &ModelParams, samples: &[&Spectrogram], delta: Option<&[f32]>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Coverage("no samples to evaluate".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        if predict(params, &s.pixels, delta)? == usize::from(s.label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Correct/total counts per class, computed with one pass over `test`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassCounts(pub BTreeMap<u16, (usize, usize)>);

impl ClassCounts {
    pub fn tally(params: &ModelParams, test: &[Spectrogram], delta: Option<&[f32]>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for s in test {
            let hit = predict(params, &s.pixels, delta)? == usize::from(s.label);
            let e: &mut (usize, usize) = counts.entry(s.label).or_default();
            e.0 += usize::from(hit);
            e.1 += 1;
        }
        Ok(Self(counts))
    }

    fn pooled(&self, keep: impl Fn(u16) -> bool) -> (usize, usize) {
        self.0
            .iter()
            .filter(|(l, _)| keep(**l))
            .fold((0, 0), |(c, t), (_, (ci, ti))| (c + ci, t + ti))
    }

    /// Pooled accuracy over the forgotten classes.
    pub fn ua(&self, forget: &BTreeSet<u16>) -> Result<f64> {
        self.check_forget(forget)?;
        let (c, t) = self.pooled(|l| forget.contains(&l));
        Ok(c as f64 / t as f64)
    }

    /// Accuracy of the worst (highest-accuracy) forgotten class.
    pub fn worst_ua(&self, forget: &BTreeSet<u16>) -> Result<f64> {
        self.check_forget(forget)?;
        Ok(forget.iter().map(|l| self.class(*l).unwrap_or(0.0)).fold(0.0, f64::max))
    }

    /// Pooled accuracy over the retained classes.
    pub fn ra(&self, forget: &BTreeSet<u16>) -> Result<f64> {
        let (c, t) = self.pooled(|l| !forget.contains(&l));
        if t == 0 {
            return Err(Error::Coverage("no retained-class test samples".into()));
        }
        Ok(c as f64 / t as f64)
    }

    pub fn overall(&self) -> Option<f64> {
        let (c, t) = self.pooled(|_| true);
        (t > 0).then(|| c as f64 / t as f64)
    }

    pub fn class(&self, label: u16) -> Option<f64> {
        self.0.get(&label).map(|&(c, t)| c as f64 / t as f64)
    }

    pub fn per_class(&self) -> BTreeMap<u16, f64> {
        self.0.iter().map(|(&l, &(c, t))| (l, c as f64 / t as f64)).collect()
    }

    fn check_forget(&self, forget: &BTreeSet<u16>) -> Result<()> {
        if forget.is_empty() {
            return Err(Error::EmptyForgetSet);
        }
        match forget.iter().find(|l| !self.0.contains_key(l)) {
            Some(l) => Err(Error::Coverage(format!("no test samples of forgotten class {l}"))),
            None => Ok(()),
        }
    }
}

/// Accuracy on the forgotten classes' test samples with `delta` applied.
pub fn unlearning_accuracy(
    params: &ModelParams,
    delta: Option<&[f32]>,
    test: &[Spectrogram],
    forget: &BTreeSet<u16>,
) -> Result<f64> {
    ClassCounts::tally(params, test, delta)?.ua(forget)
}

/// Accuracy on the retained classes' test samples with `delta` applied.
pub fn remaining_accuracy(
    params: &ModelParams,
    delta: Option<&[f32]>,
    test: &[Spectrogram],
    forget: &BTreeSet<u16>,
) -> Result<f64> {
    ClassCounts::tally(params, test, delta)?.ra(forget)
}

pub fn per_class_accuracy(params: &ModelParams, delta: Option<&[f32]>, test: &[Spectrogram]) -> Result<BTreeMap<u16, f64>> {
    Ok(ClassCounts::tally(params, test, delta)?.per_class())
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Distribution("entries must be finite and non-negative".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Distribution(format!("row sums to {sum}")));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

/// Entropy of the softmax output for `x + delta`.
pub fn prediction_entropy(params: &ModelParams, x: &[f32], delta: Option<&[f32]>) -> Result<f64> {
    let row: Vec<f64> = logits(params, x, delta)?.into_iter().map(f64::from).collect();
    entropy(&softmax(&row))
}

/// Decision rule of the entropy membership classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MiaRule {
    /// `members_below`: entropies `≤ threshold` are predicted members.
    Threshold { threshold: f64, members_below: bool },
    /// Fitted on identical entropies; predicts one side for everything.
    Constant { member: bool },
}

/// One-dimensional threshold classifier on prediction entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyMia {
    pub rule: MiaRule,
    /// Balanced accuracy on the fitting data.
    pub balanced_accuracy: f64,
}

impl EntropyMia {
    /// Picks the threshold and orientation with the best balanced accuracy.
    /// Candidates are midpoints between consecutive distinct values; ties go
    /// to the lower threshold, then to "members below".
    pub fn fit(members: &[f64], non_members: &[f64]) -> Result<Self> {
        if members.is_empty() || non_members.is_empty() {
            return Err(Error::Coverage("membership fit needs both members and non-members".into()));
        }
        if members.iter().chain(non_members).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite entropy".into()));
        }
        let mut all: Vec<(f64, bool)> = members.iter().map(|&v| (v, true)).chain(non_members.iter().map(|&v| (v, false))).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nm, nn) = (members.len() as f64, non_members.len() as f64);
        let mut best: Option<(f64, MiaRule)> = None;
        let (mut m_below, mut n_below) = (0usize, 0usize);
        for i in 0..all.len() {
            if all[i].1 {
                m_below += 1;
            } else {
                n_below += 1;
            }
            let Some(&(next, _)) = all.get(i + 1) else { break };
            let here = all[i].0;
            if next == here {
                continue;
            }
            let mut threshold = here + (next - here) / 2.0;
            if threshold >= next {
                threshold = here;
            }
            let below = 0.5 * (m_below as f64 / nm + (nn - n_below as f64) / nn);
            for (score, members_below) in [(below, true), (1.0 - below, false)] {
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, MiaRule::Threshold { threshold, members_below }));
                }
            }
        }
        Ok(match best {
            Some((balanced_accuracy, rule)) => Self { rule, balanced_accuracy },
            None => Self { rule: MiaRule::Constant { member: nm >= nn }, balanced_accuracy: 0.5 },
        })
    }

    pub fn is_member(&self, entropy: f64) -> bool {
        match self.rule {
            MiaRule::Threshold { threshold, members_below } => (entropy <= threshold) == members_below,
            MiaRule::Constant { member } => member,
        }
    }

    /// Fraction of `entropies` predicted non-member, as `1 −` the member rate.
    pub fn efficacy(&self, entropies: &[f64]) -> f64 {
        let members = entropies.iter().filter(|&&e| self.is_member(e)).count();
        1.0 - members as f64 / entropies.len() as f64
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.rule, MiaRule::Constant { .. })
    }
}

/// Fits the membership classifier: retained training samples are members,
/// test samples non-members, all with `delta` applied.
pub fn fit_mia(
    params: &ModelParams,
    delta: Option<&[f32]>,
    members: &[&Spectrogram],
    non_members: &[&Spectrogram],
) -> Result<EntropyMia> {
    let ent = |set: &[&Spectrogram]| -> Result<Vec<f64>> {
        set.iter().map(|s| prediction_entropy(params, &s.pixels, delta)).collect()
    };
    EntropyMia::fit(&ent(members)?, &ent(non_members)?)
}

/// Fraction of `forget` samples the classifier labels non-member.
pub fn mia_efficacy(mia: &EntropyMia, params: &ModelParams, delta: Option<&[f32]>, forget: &[&Spectrogram]) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::Coverage("no forget-set samples".into()));
    }
    let ent = forget.iter().map(|s| prediction_entropy(params, &s.pixels, delta)).collect::<Result<Vec<_>>>()?;
    Ok(mia.efficacy(&ent))
}

/// Grad-CAM heatmap of logit `class` for input `x`, upsampled to the input
/// size and normalized to `[0, 1]`.
///
/// Feature maps are taken from the last convolution, after its ReLU when one
/// follows directly.
pub fn gradcam(params: &ModelParams, x: &[f32], class: usize) -> Result<Vec<f64>> {
    let arch = params.arch();
    let conv = arch
        .last_conv()
        .ok_or_else(|| Error::UnsupportedArch("Grad-CAM needs a convolution layer".into()))?;
    if class >= arch.num_classes() {
        return Err(Error::Label(format!("class {class} out of range")));
    }
    let at = if arch.layers().get(conv + 1) == Some(&LayerSpec::Relu) { conv + 2 } else { conv + 1 };
    let Shape::Map { channels, height, width } = arch.shape(at) else {
        return Err(Error::UnsupportedArch("convolution output is not a feature map".into()));
    };
    let trace = forward_traced(params, x)?;
    let mut dlogits = alloc::vec![0.0f32; arch.num_classes()];
    dlogits[class] = 1.0;
    let grad = backprop(params, &trace, &dlogits, &BackpropRequest { capture: Some(at) }, None)
        .captured
        .expect("capture requested");
    let maps = trace.activation(at);
    let plane = height * width;
    let mut cam = alloc::vec![0.0f64; plane];
    for c in 0..channels {
        let g = &grad[c * plane..(c + 1) * plane];
        let w = g.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64;
        for (o, &a) in cam.iter_mut().zip(&maps[c * plane..(c + 1) * plane]) {
            *o += w * f64::from(a);
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let size = arch.input_size();
    let mut up = resize_bilinear(&cam, height, width, size, size);
    min_max_normalize(&mut up);
    Ok(up)
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that never advances.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timed<R> {
    pub label: String,
    pub value: R,
    pub seconds: f64,
}

/// Runs `f` and measures it with `clock`.
pub fn time_block<R>(clock: &dyn Clock, label: &str, f: impl FnOnce() -> R) -> Timed<R> {
    let start = clock.seconds();
    let value = f();
    let seconds = (clock.seconds() - start).max(0.0);
    Timed { label: label.into(), value, seconds }
}

/// `(‖δ‖₂, ‖δ‖∞)`.
pub fn delta_norms(delta: &[f32]) -> (f64, f64) {
    let l2 = delta.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
    let linf = delta.iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
    (num_traits::Float::sqrt(l2), linf)
}

/// Metrics of one unlearning or retraining run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub ua: f64,
    pub worst_ua: f64,
    pub ra: f64,
    /// RA of the same model on unperturbed inputs.
    pub clean_ra: f64,
    pub per_class_acc: BTreeMap<u16, f64>,
    pub mia_efficacy: f64,
    pub rte_seconds: f64,
    pub delta_l2: f64,
    pub delta_linf: f64,
    pub converged: bool,
}

impl MetricsReport {
    /// Evaluates `params` with `delta` on `test` and runs the membership
    /// attack. `members` are the retained training samples, `forget_train`
    /// the forgotten ones.
    #[allow(clippy::too_many_arguments)]
    pub fn measure(
        params: &ModelParams,
        delta: Option<&[f32]>,
        members: &[&Spectrogram],
        forget_train: &[&Spectrogram],
        test: &[Spectrogram],
        forget: &BTreeSet<u16>,
        rte_seconds: f64,
        converged: bool,
    ) -> Result<Self> {
        let counts = ClassCounts::tally(params, test, delta)?;
        let clean = if delta.is_some() { ClassCounts::tally(params, test, None)? } else { counts.clone() };
        let test_refs: Vec<&Spectrogram> = test.iter().collect();
        let mia = fit_mia(params, delta, members, &test_refs)?;
        let (delta_l2, delta_linf) = delta.map_or((0.0, 0.0), delta_norms);
        Ok(Self {
            ua: counts.ua(forget)?,
            worst_ua: counts.worst_ua(forget)?,
            ra: counts.ra(forget)?,
            clean_ra: clean.ra(forget)?,
            per_class_acc: counts.per_class(),
            mia_efficacy: mia_efficacy(&mia, params, delta, forget_train)?,
            rte_seconds,
            delta_l2,
            delta_linf,
            converged,
        })
    }

    pub fn rte_minutes(&self) -> f64 {
        self.rte_seconds / 60.0
    }
}
