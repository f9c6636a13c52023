use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::{ArchSpec, Real};
use crate::digest::{Digest, Hasher};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Weights and biases of one layer; both empty for parameter-free layers.
///
/// Convolution weights are laid out `[filter][channel][ky][kx]`, dense weights
/// `[unit][input]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    fn zeros(w: usize, b: usize) -> Self {
        Self { weight: alloc::vec![T::zero(); w], bias: alloc::vec![T::zero(); b] }
    }
}

/// Parameters of a network together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    arch: ArchSpec,
    layers: Vec<LayerParams<T>>,
}

/// The stored, `f32` model.
pub type ModelParams = Params<f32>;

impl<T: Real> Params<T> {
    pub fn zeros(arch: &ArchSpec) -> Self {
        let layers = (0..arch.layers().len())
            .map(|i| {
                let (w, b) = arch.param_lens(i);
                LayerParams::zeros(w, b)
            })
            .collect();
        Self { arch: arch.clone(), layers }
    }

    /// He-uniform weights, zero biases.
    pub fn init(arch: &ArchSpec, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = stream_rng(seed, &[stream::INIT]);
        for (i, layer) in params.layers.iter_mut().enumerate() {
            if layer.weight.is_empty() {
                continue;
            }
            let fan_in = (layer.weight.len() / layer.bias.len()) as f64;
            let limit = Float::sqrt(6.0 / fan_in);
            for w in &mut layer.weight {
                *w = T::lit(rng.random_range(-limit..limit));
            }
            debug_assert_eq!(arch.param_lens(i).0, layer.weight.len());
        }
        params
    }

    /// Builds parameters from explicit tensors, checking every length.
    pub fn from_layers(arch: &ArchSpec, layers: Vec<LayerParams<T>>) -> Result<Self> {
        if layers.len() != arch.layers().len() {
            return Err(Error::Shape { expected: arch.layers().len(), got: layers.len() });
        }
        for (i, l) in layers.iter().enumerate() {
            let (w, b) = arch.param_lens(i);
            if l.weight.len() != w {
                return Err(Error::Shape { expected: w, got: l.weight.len() });
            }
            if l.bias.len() != b {
                return Err(Error::Shape { expected: b, got: l.bias.len() });
            }
        }
        Ok(Self { arch: arch.clone(), layers })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat views of every tensor in declaration order (weight, then bias).
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .filter(|l| !l.weight.is_empty())
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers
            .iter_mut()
            .filter(|l| !l.weight.is_empty())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap()).collect();
        Params {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams { weight: conv(&l.weight), bias: conv(&l.bias) })
                .collect(),
        }
    }

    /// All tensors concatenated in declaration order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().flat_map(|t| t.iter().cloned()).collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn from_flat(arch: &ArchSpec, flat: &[T]) -> Result<Self> {
        let mut params = Self::zeros(arch);
        let total = params.param_count();
        if flat.len() != total {
            return Err(Error::Shape { expected: total, got: flat.len() });
        }
        let mut rest = flat;
        for t in params.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl Params<f32> {
    /// Digest over the architecture encoding and every parameter's bytes.
    pub fn digest(&self) -> Digest {
        let mut h = Hasher::new();
        h.update(&self.arch.encode());
        for t in self.tensors() {
            h.update_f32s(t);
        }
        h.finish()
    }
}

/// `θ ← θ − lr·g` on every tensor.
pub fn sgd_step<T: Real>(params: &mut Params<T>, grads: &[LayerParams<T>], lr: T) -> Result<()> {
    if grads.len() != params.layers.len() {
        return Err(Error::Shape { expected: params.layers.len(), got: grads.len() });
    }
    for (p, g) in params.layers.iter().zip(grads) {
        if p.weight.len() != g.weight.len() {
            return Err(Error::Shape { expected: p.weight.len(), got: g.weight.len() });
        }
        if p.bias.len() != g.bias.len() {
            return Err(Error::Shape { expected: p.bias.len(), got: g.bias.len() });
        }
    }
    for (p, g) in params.layers.iter_mut().zip(grads) {
        for (w, d) in p.weight.iter_mut().zip(&g.weight) {
            *w -= lr * *d;
        }
        for (b, d) in p.bias.iter_mut().zip(&g.bias) {
            *b -= lr * *d;
        }
    }
    Ok(())
}
