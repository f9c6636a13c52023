//! Forget vectors: a universal additive input perturbation, optimized against
//! a frozen classifier, that erases chosen devices while keeping the rest.
//!
//! Single-device unlearning optimizes the H×H vector directly. Multi-device
//! unlearning can either do the same on the union of targets, or keep a bank
//! of per-class vectors fixed and only learn one coefficient per class.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::digest::{Digest, Hasher};
use crate::error::{Error, Result};
use crate::eval::{delta_norms, ClassCounts, Clock};
use crate::featurize::{DatasetSplit, Spectrogram};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::tinynet::{backward_inputs, forget_margin, LossKind, ModelParams, Params, Real};

/// How mini-batches are drawn from the forget and retain sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Reshuffled every epoch.
    Shuffled,
    /// Dataset order every epoch, for reproducible property checks.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlearnConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub th_ua: f64,
    pub th_ra: f64,
    pub eval_every: usize,
    pub batch_mode: BatchMode,
    /// Stop at the first evaluation that meets both thresholds. When off, all
    /// epochs run and the final vector is returned.
    pub stop_on_threshold: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 6.0,
            gamma: 3.0,
            tau: 1.0,
            lr: 0.01,
            batch_size: 64,
            max_epochs: 40,
            th_ua: 0.05,
            th_ra: 0.98,
            eval_every: 1,
            batch_mode: BatchMode::Shuffled,
            stop_on_threshold: true,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.alpha) && positive(self.beta) && positive(self.gamma)) {
            return Err(Error::Config("alpha, beta and gamma must be positive".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be finite and non-negative".into()));
        }
        if !positive(self.lr) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, max_epochs and eval_every must be at least 1".into()));
        }
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !(open(self.th_ua) && open(self.th_ra)) {
            return Err(Error::Config("thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> Digest {
        let mut h = Hasher::new();
        for v in [self.alpha, self.beta, self.gamma, self.tau, self.lr, self.th_ua, self.th_ra] {
            h.update_f64(v);
        }
        for v in [self.batch_size, self.max_epochs, self.eval_every] {
            h.update_u64(v as u64);
        }
        h.update(&[self.batch_mode as u8, u8::from(self.stop_on_threshold)]);
        h.finish()
    }

    fn meets(&self, worst_ua: f64, ra: f64) -> bool {
        worst_ua <= self.th_ua && ra >= self.th_ra
    }

    fn violation(&self, worst_ua: f64, ra: f64) -> f64 {
        (worst_ua - self.th_ua).max(0.0) + (self.th_ra - ra).max(0.0)
    }
}

/// `x + δ`, or a copy of `x` without a perturbation. No clipping.
pub fn add_delta(x: &[f32], delta: Option<&[f32]>) -> Result<Vec<f32>> {
    match delta {
        None => Ok(x.to_vec()),
        Some(d) if d.len() == x.len() => Ok(x.iter().zip(d).map(|(a, b)| a + b).collect()),
        Some(d) => Err(Error::Shape { expected: x.len(), got: d.len() }),
    }
}

/// An optimized H×H input perturbation and what it was optimized for.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetVector {
    pub delta: Vec<f32>,
    pub size: usize,
    pub forget_labels: BTreeSet<u16>,
    pub config: UnlearnConfig,
}

impl ForgetVector {
    pub fn zeros(size: usize, forget_labels: BTreeSet<u16>, config: UnlearnConfig) -> Self {
        Self { delta: alloc::vec![0.0; size * size], size, forget_labels, config }
    }

    pub fn from_delta(delta: Vec<f32>, size: usize, forget_labels: BTreeSet<u16>, config: UnlearnConfig) -> Result<Self> {
        if delta.len() != size * size {
            return Err(Error::Shape { expected: size * size, got: delta.len() });
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("forget vector has non-finite entries".into()));
        }
        Ok(Self { delta, size, forget_labels, config })
    }

    /// Number of scalars the optimizer updates.
    pub fn trainable_scalars(&self) -> usize {
        self.size * self.size
    }

    pub fn norms(&self) -> (f64, f64) {
        delta_norms(&self.delta)
    }

    pub fn config_digest(&self) -> Digest {
        self.config.digest()
    }

    /// Digest of the pixels, size and target labels.
    pub fn digest(&self) -> Digest {
        let mut h = Hasher::new();
        h.update_u64(self.size as u64);
        for &l in &self.forget_labels {
            h.update(&l.to_le_bytes());
        }
        h.update_f32s(&self.delta);
        h.finish()
    }
}

/// The perturbed input `x + δ`.
pub fn apply(fv: &ForgetVector, x: &Spectrogram) -> Result<Vec<f32>> {
    if x.size != fv.size {
        return Err(Error::Shape { expected: fv.size, got: x.size });
    }
    add_delta(&x.pixels, Some(&fv.delta))
}

/// Per-sample forget loss `max{f_y − max_{k≠y} f_k, −τ}`.
pub fn forget_loss(logits: &[f64], y: usize, tau: f64) -> Result<f64> {
    forget_margin(logits, y, tau)
}

/// Borrowed inputs with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<'a, T> {
    pub inputs: Vec<&'a [T]>,
    pub labels: Vec<u16>,
}

impl<'a> Batch<'a, f32> {
    pub fn from_samples(samples: &[&'a Spectrogram]) -> Self {
        Self { inputs: samples.iter().map(|s| s.pixels.as_slice()).collect(), labels: samples.iter().map(|s| s.label).collect() }
    }
}

impl<T> Batch<'_, T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Batch-mean loss at the perturbed inputs and its gradient with respect to δ.
///
/// Since `∂(x + δ)/∂δ` is the identity, the gradient is the sum of the
/// per-sample input gradients evaluated at `x + δ`.
pub fn delta_gradient<T: Real>(params: &Params<T>, delta: &[T], batch: &Batch<'_, T>, kind: LossKind) -> Result<(T, Vec<T>)> {
    let perturbed: Vec<Vec<T>> = batch
        .inputs
        .iter()
        .map(|x| {
            if x.len() != delta.len() {
                return Err(Error::Shape { expected: x.len(), got: delta.len() });
            }
            Ok(x.iter().zip(delta).map(|(&a, &b)| a + b).collect())
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[T]> = perturbed.iter().map(Vec::as_slice).collect();
    let g = backward_inputs(params, &refs, &batch.labels, kind)?;
    let mut sum = alloc::vec![T::zero(); delta.len()];
    for row in &g.input_grads {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok((g.loss, sum))
}

/// Value and δ-gradient of the unlearning objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective<T> {
    pub value: T,
    pub retain_loss: T,
    pub forget_loss: T,
    pub grad: Vec<T>,
}

/// `α·CE(retain + δ) + β·L_F(forget + δ) + γ‖δ‖²` and its gradient.
///
/// An empty retain batch contributes nothing; an empty forget batch is an
/// error.
pub fn objective<T: Real>(
    params: &Params<T>,
    delta: &[T],
    forget: &Batch<'_, T>,
    retain: &Batch<'_, T>,
    cfg: &UnlearnConfig,
) -> Result<Objective<T>> {
    if forget.is_empty() {
        return Err(Error::EmptyForgetSet);
    }
    let (alpha, beta, gamma) = (T::lit(cfg.alpha), T::lit(cfg.beta), T::lit(cfg.gamma));
    let (forget_loss, gf) = delta_gradient(params, delta, forget, LossKind::ForgetMargin { tau: cfg.tau })?;
    let (retain_loss, gr) = if retain.is_empty() {
        (T::zero(), alloc::vec![T::zero(); delta.len()])
    } else {
        delta_gradient(params, delta, retain, LossKind::CrossEntropy)?
    };
    let two = T::lit(2.0);
    let grad = delta
        .iter()
        .zip(gf.iter().zip(&gr))
        .map(|(&d, (&f, &r))| alpha * r + beta * f + two * gamma * d)
        .collect();
    let sq: T = delta.iter().map(|&d| d * d).sum();
    Ok(Objective { value: alpha * retain_loss + beta * forget_loss + gamma * sq, retain_loss, forget_loss, grad })
}

/// Metrics recorded at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub epoch: usize,
    /// Mean objective over the epoch's steps; `None` before the first step.
    pub objective: Option<f64>,
    pub ua: f64,
    pub worst_ua: f64,
    pub ra: f64,
    pub delta_l2: f64,
    pub delta_linf: f64,
}

/// Bookkeeping shared by both optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInfo {
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    /// Epoch whose state was returned.
    pub selected_epoch: usize,
    pub epochs_run: usize,
    pub seconds: f64,
    /// Model digest, identical before and after the run.
    pub model_digest: Digest,
    pub trainable_scalars: usize,
}

impl RunInfo {
    pub fn selected(&self) -> &TraceEntry {
        self.trace.iter().find(|t| t.epoch == self.selected_epoch).expect("selected epoch is traced")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfvOutcome {
    pub vector: ForgetVector,
    pub run: RunInfo,
}

/// A bank of per-class vectors and the coefficients combining them.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationState {
    pub bank: Vec<ForgetVector>,
    pub coeffs: Vec<f32>,
}

impl CombinationState {
    pub fn trainable_scalars(&self) -> usize {
        self.coeffs.len()
    }

    pub fn combined(&self) -> Result<Vec<f32>> {
        combine(&self.bank, &self.coeffs)
    }

    pub fn bank_digests(&self) -> Vec<Digest> {
        self.bank.iter().map(ForgetVector::digest).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComvOutcome {
    pub state: CombinationState,
    /// The combined vector for the selected coefficients.
    pub vector: ForgetVector,
    pub run: RunInfo,
}

/// `Σ_k c_k δ_k`.
pub fn combine(bank: &[ForgetVector], coeffs: &[f32]) -> Result<Vec<f32>> {
    if bank.len() != coeffs.len() {
        return Err(Error::Shape { expected: bank.len(), got: coeffs.len() });
    }
    let Some(first) = bank.first() else {
        return Err(Error::Data("empty forget-vector bank".into()));
    };
    let mut out = alloc::vec![0.0f32; first.delta.len()];
    for (fv, &c) in bank.iter().zip(coeffs) {
        if fv.delta.len() != out.len() {
            return Err(Error::Shape { expected: out.len(), got: fv.delta.len() });
        }
        for (o, &d) in out.iter_mut().zip(&fv.delta) {
            *o += c * d;
        }
    }
    Ok(out)
}

/// What the optimizer updates: δ itself, or the coefficients of a bank.
trait Variable {
    fn delta(&self) -> &[f32];
    fn step(&mut self, grad: &[f32], lr: f32);
    fn state(&self) -> Vec<f32>;
    fn trainable(&self) -> usize;
}

struct Direct(Vec<f32>);

impl Variable for Direct {
    fn delta(&self) -> &[f32] {
        &self.0
    }

    fn step(&mut self, grad: &[f32], lr: f32) {
        for (d, g) in self.0.iter_mut().zip(grad) {
            *d -= lr * g;
        }
    }

    fn state(&self) -> Vec<f32> {
        self.0.clone()
    }

    fn trainable(&self) -> usize {
        self.0.len()
    }
}

struct Coefficients<'b> {
    bank: &'b [ForgetVector],
    coeffs: Vec<f32>,
    delta: Vec<f32>,
}

impl Coefficients<'_> {
    /// `∂L/∂c_k = ⟨∇_δ L, δ_k⟩`.
    fn grad(&self, grad_delta: &[f32]) -> Vec<f32> {
        self.bank
            .iter()
            .map(|fv| fv.delta.iter().zip(grad_delta).map(|(&d, &g)| f64::from(d) * f64::from(g)).sum::<f64>() as f32)
            .collect()
    }
}

impl Variable for Coefficients<'_> {
    fn delta(&self) -> &[f32] {
        &self.delta
    }

    fn step(&mut self, grad: &[f32], lr: f32) {
        let gc = self.grad(grad);
        for (c, g) in self.coeffs.iter_mut().zip(gc) {
            *c -= lr * g;
        }
        self.delta = combine(self.bank, &self.coeffs).expect("bank shapes were checked");
    }

    fn state(&self) -> Vec<f32> {
        self.coeffs.clone()
    }

    fn trainable(&self) -> usize {
        self.coeffs.len()
    }
}

fn check_model(params: &ModelParams, dataset: &DatasetSplit, forget: &BTreeSet<u16>) -> Result<()> {
    let size = params.arch().input_size();
    if dataset.input_size() != size {
        return Err(Error::Shape { expected: size, got: dataset.input_size() });
    }
    if dataset.num_classes() > params.arch().num_classes() {
        return Err(Error::Shape { expected: params.arch().num_classes(), got: dataset.num_classes() });
    }
    if forget.is_empty() {
        return Err(Error::EmptyForgetSet);
    }
    let known = dataset.labels();
    if let Some(bad) = forget.iter().find(|l| !known.contains(l)) {
        return Err(Error::Label(format!("unknown forget label {bad}")));
    }
    if known.iter().all(|l| forget.contains(l)) {
        return Err(Error::Data("cannot forget every class".into()));
    }
    Ok(())
}

/// Steps per epoch, batch size and sample order for one of the two sets.
struct Sampler<'s> {
    samples: Vec<&'s Spectrogram>,
    order: Vec<usize>,
}

impl<'s> Sampler<'s> {
    fn new(samples: Vec<&'s Spectrogram>) -> Self {
        let order = (0..samples.len()).collect();
        Self { samples, order }
    }

    fn shuffle(&mut self, seed: u64, epoch: usize, tag: u64) {
        self.order.shuffle(&mut stream_rng(seed, &[stream::UNLEARN, epoch as u64, tag]));
    }

    /// Batch `step` of an epoch, wrapping around the set.
    fn batch(&self, step: usize, size: usize) -> Batch<'s, f32> {
        let picked: Vec<&'s Spectrogram> =
            (0..size).map(|j| self.samples[self.order[(step * size + j) % self.order.len()]]).collect();
        Batch::from_samples(&picked)
    }
}

fn run<V: Variable>(
    params: &ModelParams,
    dataset: &DatasetSplit,
    forget: &BTreeSet<u16>,
    cfg: &UnlearnConfig,
    seed: u64,
    clock: &dyn Clock,
    var: &mut V,
) -> Result<(Vec<f32>, RunInfo)> {
    cfg.validate()?;
    check_model(params, dataset, forget)?;
    let digest_before = params.digest();
    let start = clock.seconds();
    let split = dataset.retarget(forget)?;
    let mut fset = Sampler::new(split.forget_set());
    let mut rset = Sampler::new(split.retain_set());
    if fset.samples.is_empty() {
        return Err(Error::EmptyForgetSet);
    }
    if rset.samples.is_empty() {
        return Err(Error::Data("retain set is empty".into()));
    }
    let evaluate = |delta: &[f32], epoch: usize, objective: Option<f64>| -> Result<TraceEntry> {
        let counts = ClassCounts::tally(params, &dataset.test, Some(delta))?;
        let (delta_l2, delta_linf) = delta_norms(delta);
        Ok(TraceEntry {
            epoch,
            objective,
            ua: counts.ua(forget)?,
            worst_ua: counts.worst_ua(forget)?,
            ra: counts.ra(forget)?,
            delta_l2,
            delta_linf,
        })
    };
    let first = evaluate(var.delta(), 0, None)?;
    let mut best = (cfg.violation(first.worst_ua, first.ra), 0usize, var.state());
    let mut trace = alloc::vec![first];
    let mut stopped = cfg.stop_on_threshold && cfg.meets(first.worst_ua, first.ra);
    let steps = fset.samples.len().max(rset.samples.len()).div_ceil(cfg.batch_size);
    let lr = cfg.lr as f32;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        if stopped {
            break;
        }
        if cfg.batch_mode == BatchMode::Shuffled {
            fset.shuffle(seed, epoch, 0);
            rset.shuffle(seed, epoch, 1);
        }
        let mut total = 0.0f64;
        for step in 0..steps {
            let fb = fset.batch(step, cfg.batch_size);
            let rb = rset.batch(step, cfg.batch_size);
            let obj = objective(params, var.delta(), &fb, &rb, cfg)?;
            total += f64::from(obj.value);
            var.step(&obj.grad, lr);
        }
        epochs_run = epoch;
        if var.delta().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("forget vector diverged in epoch {epoch}")));
        }
        if epoch % cfg.eval_every != 0 && epoch != cfg.max_epochs {
            continue;
        }
        let entry = evaluate(var.delta(), epoch, Some(total / steps as f64))?;
        trace.push(entry);
        let v = cfg.violation(entry.worst_ua, entry.ra);
        if v < best.0 || !cfg.stop_on_threshold {
            best = (v, epoch, var.state());
        }
        stopped = cfg.stop_on_threshold && cfg.meets(entry.worst_ua, entry.ra);
    }
    let seconds = (clock.seconds() - start).max(0.0);
    if params.digest() != digest_before {
        return Err(Error::Integrity);
    }
    let (violation, selected_epoch, state) = best;
    let info = RunInfo {
        trace,
        converged: violation == 0.0,
        selected_epoch,
        epochs_run,
        seconds,
        model_digest: digest_before,
        trainable_scalars: var.trainable(),
    };
    Ok((state, info))
}

/// Optimizes a forget vector for `forget` against the frozen `params`,
/// starting from zero.
///
/// Thresholds are checked on the test split with δ applied to every input.
/// Missing them after the last epoch is not an error: the least-violating
/// vector is returned with `converged` unset.
pub fn optimize_ffv(
    params: &ModelParams,
    dataset: &DatasetSplit,
    forget: &BTreeSet<u16>,
    cfg: &UnlearnConfig,
    seed: u64,
    clock: &dyn Clock,
) -> Result<FfvOutcome> {
    let size = params.arch().input_size();
    let mut var = Direct(alloc::vec![0.0; size * size]);
    let (delta, run) = run(params, dataset, forget, cfg, seed, clock, &mut var)?;
    let vector = ForgetVector::from_delta(delta, size, forget.clone(), *cfg)?;
    Ok(FfvOutcome { vector, run })
}

/// Seed used for the bank entry of class `label`.
pub fn bank_seed(seed: u64, label: u16) -> u64 {
    derive_seed(seed, &[stream::BANK, u64::from(label)])
}

/// One single-class vector per label of `dataset`, ordered by label.
pub fn precompute_bank(
    params: &ModelParams,
    dataset: &DatasetSplit,
    cfg_for: &dyn Fn(u16) -> UnlearnConfig,
    seed: u64,
    clock: &dyn Clock,
) -> Result<Vec<FfvOutcome>> {
    dataset
        .labels()
        .into_iter()
        .map(|k| {
            let target: BTreeSet<u16> = [k].into();
            optimize_ffv(params, dataset, &target, &cfg_for(k), bank_seed(seed, k), clock)
        })
        .collect()
}

/// Learns one coefficient per bank entry so that the combined vector forgets
/// every class in `forget`. Coefficients start at the indicator of the
/// targeted classes, and stopping uses the worst targeted class.
pub fn optimize_coefficients(
    params: &ModelParams,
    dataset: &DatasetSplit,
    forget: &BTreeSet<u16>,
    bank: &[ForgetVector],
    cfg: &UnlearnConfig,
    seed: u64,
    clock: &dyn Clock,
) -> Result<ComvOutcome> {
    if forget.len() < 2 {
        return Err(Error::Mode("coefficient optimization needs at least two forget labels".into()));
    }
    let size = params.arch().input_size();
    if let Some(bad) = bank.iter().find(|fv| fv.size != size) {
        return Err(Error::Shape { expected: size, got: bad.size });
    }
    let coeffs: Vec<f32> = bank
        .iter()
        .map(|fv| if !fv.forget_labels.is_empty() && fv.forget_labels.is_subset(forget) { 1.0 } else { 0.0 })
        .collect();
    let delta = combine(bank, &coeffs)?;
    let mut var = Coefficients { bank, coeffs, delta };
    let (coeffs, run) = run(params, dataset, forget, cfg, seed, clock, &mut var)?;
    let state = CombinationState { bank: bank.to_vec(), coeffs };
    let vector = ForgetVector::from_delta(state.combined()?, size, forget.clone(), *cfg)?;
    Ok(ComvOutcome { state, vector, run })
}
