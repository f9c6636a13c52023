use alloc::format;
use alloc::vec::Vec;

use super::Real;
use crate::error::{Error, Result};

/// Loss attached to the logits during backpropagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Mean of `−log softmax(f)[y]`.
    CrossEntropy,
    /// Mean of `max{f_y − max_{k≠y} f_k, −τ}`.
    ForgetMargin { tau: f64 },
    /// Mean of the raw logit `f_class`, independent of the label.
    Logit { class: usize },
}

impl LossKind {
    pub(crate) fn validate(&self, classes: usize) -> Result<()> {
        match *self {
            LossKind::CrossEntropy => Ok(()),
            LossKind::ForgetMargin { tau } => {
                if classes < 2 {
                    return Err(Error::Config(format!("margin loss needs 2+ classes, have {classes}")));
                }
                if !(tau >= 0.0 && tau.is_finite()) {
                    return Err(Error::Config("tau must be finite and non-negative".into()));
                }
                Ok(())
            }
            LossKind::Logit { class } if class < classes => Ok(()),
            LossKind::Logit { class } => Err(Error::Config(format!("logit {class} out of range"))),
        }
    }

    /// Loss of one logit row and its gradient with respect to that row.
    pub(crate) fn row<T: Real>(&self, logits: &[T], label: usize) -> (T, Vec<T>) {
        match *self {
            LossKind::CrossEntropy => {
                let mut p = softmax(logits);
                let loss = -log_softmax(logits)[label];
                p[label] -= T::one();
                (loss, p)
            }
            LossKind::ForgetMargin { tau } => {
                let mut g = alloc::vec![T::zero(); logits.len()];
                let (loss, rival) = margin(logits, label, T::lit(tau));
                if let Some(k) = rival {
                    g[label] = T::one();
                    g[k] = -T::one();
                }
                (loss, g)
            }
            LossKind::Logit { class } => {
                let mut g = alloc::vec![T::zero(); logits.len()];
                g[class] = T::one();
                (logits[class], g)
            }
        }
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax<R: Real>(row: &[R]) -> Vec<R> {
    let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: R = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax<R: Real>(row: &[R]) -> Vec<R> {
    let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<R>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Mean cross-entropy over a batch of logit rows.
pub fn ce_loss<R: Real>(logits: &[Vec<R>], labels: &[u16]) -> Result<R> {
    if logits.len() != labels.len() {
        return Err(Error::Shape { expected: logits.len(), got: labels.len() });
    }
    if logits.is_empty() {
        return Ok(R::zero());
    }
    let mut total = R::zero();
    for (row, &y) in logits.iter().zip(labels) {
        let y = usize::from(y);
        if y >= row.len() {
            return Err(Error::Label(format!("label {y} out of range for {} classes", row.len())));
        }
        total += -log_softmax(row)[y];
    }
    Ok(total / R::from_usize(logits.len()).unwrap())
}

/// The clamped margin `max{f_y − max_{k≠y} f_k, −τ}` of a single row.
pub fn forget_margin<R: Real>(logits: &[R], y: usize, tau: R) -> Result<R> {
    if logits.len() < 2 {
        return Err(Error::DegenerateClasses(logits.len()));
    }
    if y >= logits.len() {
        return Err(Error::Label(format!("label {y} out of range for {} classes", logits.len())));
    }
    Ok(margin(logits, y, tau).0)
}

/// Margin value plus the rival class when the clamp is inactive.
fn margin<R: Real>(logits: &[R], y: usize, tau: R) -> (R, Option<usize>) {
    let mut rival = if y == 0 { 1 } else { 0 };
    for (k, &v) in logits.iter().enumerate() {
        if k != y && v > logits[rival] {
            rival = k;
        }
    }
    let m = logits[y] - logits[rival];
    if m > -tau {
        (m, Some(rival))
    } else {
        (-tau, None)
    }
}
