//! Finite-difference gradient checking.
//!
//! Everything here uses forward passes only, so it can be used to check the
//! reverse-mode code in [`crate::tinynet`] without sharing any of its logic.
//! Piecewise-linear layers (ReLU, max pooling) and the clamped margin loss
//! have kinks; a central difference straddling one is meaningless, so
//! [`ActivationPattern`] lets callers detect and skip those coordinates.

use alloc::vec::Vec;

use crate::tinynet::{forward_traced, LayerSpec, Params, Real};

/// Central difference `(f(x+h) − f(x−h)) / 2h` along coordinate `index`.
pub fn central_difference<F>(mut f: F, point: &mut [f64], index: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = point[index];
    point[index] = orig + h;
    let plus = f(point);
    point[index] = orig - h;
    let minus = f(point);
    point[index] = orig;
    (plus - minus) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|)`, zero when both are exactly zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Which side of every kink a forward pass landed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern(Vec<u32>);

impl ActivationPattern {
    pub fn of<T: Real>(params: &Params<T>, input: &[T]) -> Option<Self> {
        let trace = forward_traced(params, input).ok()?;
        let mut bits = Vec::new();
        for (i, layer) in params.arch().layers().iter().enumerate() {
            match layer {
                LayerSpec::Relu => bits.extend(trace.activation(i).iter().map(|&v| u32::from(v > T::zero()))),
                LayerSpec::MaxPool2 => bits.extend_from_slice(trace.pool_switches(i)),
                _ => {}
            }
        }
        Some(Self(bits))
    }

    /// Appends the margin-loss state: the rival class and whether the clamp is
    /// active.
    pub fn with_margin<T: Real>(mut self, logits: &[T], label: usize, tau: T) -> Self {
        let mut rival = if label == 0 { 1 } else { 0 };
        for (k, &v) in logits.iter().enumerate() {
            if k != label && v > logits[rival] {
                rival = k;
            }
        }
        let clamped = logits[label] - logits[rival] <= -tau;
        self.0.push(rival as u32);
        self.0.push(u32::from(clamped));
        self
    }
}
