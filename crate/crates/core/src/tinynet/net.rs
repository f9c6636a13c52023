use alloc::format;
use alloc::vec::Vec;

use super::{LayerParams, LayerSpec, LossKind, Params, Real, Shape};
use crate::error::{Error, Result};

/// Activations recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    acts: Vec<Vec<T>>,
    switches: Vec<Vec<u32>>,
}

impl<T: Real> Trace<T> {
    /// Input of layer `i`; index `layers().len()` holds the logits.
    pub fn activation(&self, i: usize) -> &[T] {
        &self.acts[i]
    }

    pub fn logits(&self) -> &[T] {
        self.acts.last().expect("trace has an output")
    }

    /// For each max-pool layer, the flat input index selected by every output
    /// (empty for other layers).
    pub fn pool_switches(&self, i: usize) -> &[u32] {
        &self.switches[i]
    }
}

/// Gradients of a batch-mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients<T> {
    pub param_grads: Vec<LayerParams<T>>,
    /// One H×H gradient per sample, of the batch-mean loss.
    pub input_grads: Vec<Vec<T>>,
    pub loss: T,
}

/// Like [`BatchGradients`] without the parameter part.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradients<T> {
    pub input_grads: Vec<Vec<T>>,
    pub loss: T,
}

fn check_input<T: Real>(params: &Params<T>, input: &[T]) -> Result<()> {
    let expected = params.arch().shape(0).len();
    if input.len() != expected {
        return Err(Error::Shape { expected, got: input.len() });
    }
    Ok(())
}

/// Single-sample forward pass keeping every activation.
pub fn forward_traced<T: Real>(params: &Params<T>, input: &[T]) -> Result<Trace<T>> {
    check_input(params, input)?;
    let arch = params.arch();
    let mut acts = Vec::with_capacity(arch.layers().len() + 1);
    let mut switches = Vec::with_capacity(arch.layers().len());
    acts.push(input.to_vec());
    for (i, layer) in arch.layers().iter().enumerate() {
        let x = &acts[i];
        let p = &params.layers()[i];
        let (in_shape, out_shape) = (arch.shape(i), arch.shape(i + 1));
        let mut sw = Vec::new();
        let y = match *layer {
            LayerSpec::Conv2d { kernel, stride, .. } => conv_forward(x, p, in_shape, out_shape, kernel, stride),
            LayerSpec::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            LayerSpec::MaxPool2 => {
                let (y, s) = pool_forward(x, in_shape, out_shape);
                sw = s;
                y
            }
            LayerSpec::Flatten => x.clone(),
            LayerSpec::Dense { .. } => dense_forward(x, p),
        };
        switches.push(sw);
        acts.push(y);
    }
    Ok(Trace { acts, switches })
}

/// Logits for every sample in the batch. Never touches `params`.
pub fn forward<T: Real>(params: &Params<T>, inputs: &[&[T]]) -> Result<Vec<Vec<T>>> {
    inputs
        .iter()
        .map(|x| forward_traced(params, x).map(|t| t.logits().to_vec()))
        .collect()
}

pub(crate) struct BackpropRequest {
    /// Capture the gradient with respect to the input of this layer.
    pub capture: Option<usize>,
}

pub(crate) struct Backprop<T> {
    pub input_grad: Vec<T>,
    pub captured: Option<Vec<T>>,
}

/// Reverse pass from `dlogits`. Parameter gradients are accumulated into
/// `param_acc` when given.
pub(crate) fn backprop<T: Real>(
    params: &Params<T>,
    trace: &Trace<T>,
    dlogits: &[T],
    req: &BackpropRequest,
    mut param_acc: Option<&mut [LayerParams<T>]>,
) -> Backprop<T> {
    let arch = params.arch();
    let mut grad = dlogits.to_vec();
    let mut captured = None;
    for i in (0..arch.layers().len()).rev() {
        if req.capture == Some(i + 1) {
            captured = Some(grad.clone());
        }
        let x = &trace.acts[i];
        let p = &params.layers()[i];
        let (in_shape, out_shape) = (arch.shape(i), arch.shape(i + 1));
        let acc = param_acc.as_deref_mut().map(|a| &mut a[i]);
        grad = match arch.layers()[i] {
            LayerSpec::Conv2d { kernel, stride, .. } => {
                conv_backward(x, p, &grad, in_shape, out_shape, kernel, stride, acc)
            }
            LayerSpec::Relu => x
                .iter()
                .zip(&grad)
                .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                .collect(),
            LayerSpec::MaxPool2 => {
                let mut din = alloc::vec![T::zero(); x.len()];
                for (&s, &g) in trace.switches[i].iter().zip(&grad) {
                    din[s as usize] += g;
                }
                din
            }
            LayerSpec::Flatten => grad,
            LayerSpec::Dense { .. } => dense_backward(x, p, &grad, acc),
        };
    }
    if req.capture == Some(0) {
        captured = Some(grad.clone());
    }
    Backprop { input_grad: grad, captured }
}

fn prepare<T: Real>(params: &Params<T>, inputs: &[&[T]], labels: &[u16], kind: &LossKind) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Shape { expected: inputs.len(), got: labels.len() });
    }
    let classes = params.arch().num_classes();
    kind.validate(classes)?;
    if let Some(y) = labels.iter().find(|&&y| usize::from(y) >= classes) {
        return Err(Error::Label(format!("label {y} out of range for {classes} classes")));
    }
    inputs.iter().try_for_each(|x| check_input(params, x))
}

/// Exact gradients of the batch-mean loss with respect to every parameter and
/// every input pixel.
pub fn backward<T: Real>(
    params: &Params<T>,
    inputs: &[&[T]],
    labels: &[u16],
    kind: LossKind,
) -> Result<BatchGradients<T>> {
    prepare(params, inputs, labels, &kind)?;
    let mut param_grads: Vec<LayerParams<T>> = params
        .layers()
        .iter()
        .map(|l| LayerParams {
            weight: alloc::vec![T::zero(); l.weight.len()],
            bias: alloc::vec![T::zero(); l.bias.len()],
        })
        .collect();
    let scale = T::one() / T::from_usize(inputs.len()).unwrap();
    let mut loss = T::zero();
    let mut input_grads = Vec::with_capacity(inputs.len());
    for (x, &y) in inputs.iter().zip(labels) {
        let trace = forward_traced(params, x)?;
        let (l, mut d) = kind.row(trace.logits(), usize::from(y));
        loss += l;
        d.iter_mut().for_each(|v| *v *= scale);
        let bp = backprop(params, &trace, &d, &BackpropRequest { capture: None }, Some(&mut param_grads));
        input_grads.push(bp.input_grad);
    }
    Ok(BatchGradients { param_grads, input_grads, loss: loss * scale })
}

/// Input gradients only; skips the parameter-gradient work.
pub fn backward_inputs<T: Real>(
    params: &Params<T>,
    inputs: &[&[T]],
    labels: &[u16],
    kind: LossKind,
) -> Result<InputGradients<T>> {
    prepare(params, inputs, labels, &kind)?;
    let scale = T::one() / T::from_usize(inputs.len()).unwrap();
    let mut loss = T::zero();
    let mut input_grads = Vec::with_capacity(inputs.len());
    for (x, &y) in inputs.iter().zip(labels) {
        let trace = forward_traced(params, x)?;
        let (l, mut d) = kind.row(trace.logits(), usize::from(y));
        loss += l;
        d.iter_mut().for_each(|v| *v *= scale);
        input_grads.push(backprop(params, &trace, &d, &BackpropRequest { capture: None }, None).input_grad);
    }
    Ok(InputGradients { input_grads, loss: loss * scale })
}

fn map_dims(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Map { channels, height, width } => (channels, height, width),
        Shape::Flat(n) => (n, 1, 1),
    }
}

fn conv_forward<T: Real>(x: &[T], p: &LayerParams<T>, ins: Shape, outs: Shape, k: usize, s: usize) -> Vec<T> {
    let (c_in, h, w) = map_dims(ins);
    let (f_out, oh, ow) = map_dims(outs);
    let mut y = alloc::vec![T::zero(); f_out * oh * ow];
    for f in 0..f_out {
        let out = &mut y[f * oh * ow..(f + 1) * oh * ow];
        out.iter_mut().for_each(|v| *v = p.bias[f]);
        for c in 0..c_in {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = p.weight[((f * c_in + c) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let row = &plane[(oy * s + ky) * w + kx..];
                        let orow = &mut out[oy * ow..(oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            *o += wv * row[ox * s];
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &[T],
    p: &LayerParams<T>,
    dy: &[T],
    ins: Shape,
    outs: Shape,
    k: usize,
    s: usize,
    mut acc: Option<&mut LayerParams<T>>,
) -> Vec<T> {
    let (c_in, h, w) = map_dims(ins);
    let (f_out, oh, ow) = map_dims(outs);
    let mut dx = alloc::vec![T::zero(); x.len()];
    for f in 0..f_out {
        let g = &dy[f * oh * ow..(f + 1) * oh * ow];
        if let Some(a) = acc.as_deref_mut() {
            a.bias[f] += g.iter().cloned().sum::<T>();
        }
        for c in 0..c_in {
            let plane = &x[c * h * w..(c + 1) * h * w];
            let dplane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((f * c_in + c) * k + ky) * k + kx;
                    let wv = p.weight[wi];
                    let mut dw = T::zero();
                    for oy in 0..oh {
                        let base = (oy * s + ky) * w + kx;
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        for (ox, &gv) in grow.iter().enumerate() {
                            let idx = base + ox * s;
                            dw += gv * plane[idx];
                            dplane[idx] += gv * wv;
                        }
                    }
                    if let Some(a) = acc.as_deref_mut() {
                        a.weight[wi] += dw;
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward<T: Real>(x: &[T], ins: Shape, outs: Shape) -> (Vec<T>, Vec<u32>) {
    let (c, h, w) = map_dims(ins);
    let (_, oh, ow) = map_dims(outs);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut sw = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                sw.push(best as u32);
            }
        }
    }
    (y, sw)
}

fn dense_forward<T: Real>(x: &[T], p: &LayerParams<T>) -> Vec<T> {
    let n = x.len();
    p.bias
        .iter()
        .enumerate()
        .map(|(u, &b)| b + p.weight[u * n..(u + 1) * n].iter().zip(x).map(|(&w, &v)| w * v).sum::<T>())
        .collect()
}

fn dense_backward<T: Real>(x: &[T], p: &LayerParams<T>, dy: &[T], mut acc: Option<&mut LayerParams<T>>) -> Vec<T> {
    let n = x.len();
    let mut dx = alloc::vec![T::zero(); n];
    for (u, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        let row = &p.weight[u * n..(u + 1) * n];
        for (d, &w) in dx.iter_mut().zip(row) {
            *d += g * w;
        }
        if let Some(a) = acc.as_deref_mut() {
            a.bias[u] += g;
            for (dw, &v) in a.weight[u * n..(u + 1) * n].iter_mut().zip(x) {
                *dw += g * v;
            }
        }
    }
    dx
}
