//! DP-SGD steps over virtual batches.
//!
//! A step clips every per-example gradient to norm `C`, multiplies it by its
//! mask bit (masked plans only), sums within each physical batch, adds the
//! batch sums into an accumulator in plan order, adds `N(0, σ²C²I)` noise,
//! scales by `1/L` with `L` the *expected* batch size, and takes a plain SGD
//! step.

mod data;
mod models;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};
use core::time::Duration;

use rand::Rng;

use crate::error::invalid;
use crate::sampling::{build_batch_plan, draw_poisson_batch, shuffle_batches_reference, BatchPlan, SamplerConfig};
use crate::{Error, Result, RngStreams};

pub use data::{linear_regression, linearly_separable, Dataset, Example};
pub use models::{LayerTrace, LinearRegression, LogisticRegression, Mlp, Model};

macro_rules! flat_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }
    };
}

flat_vector!(
    /// Flat model parameters.
    ParamVector
);
flat_vector!(
    /// Flat gradient, same layout as [`ParamVector`].
    GradVector
);

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Per-example clipping bound `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    max_norm: f64,
}

impl ClipSpec {
    pub fn new(max_norm: f64) -> Result<Self> {
        if !(max_norm > 0.0 && max_norm.is_finite()) {
            return Err(invalid!("clipping norm must be positive and finite, got {max_norm}"));
        }
        Ok(Self { max_norm })
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }
}

/// Noise multiplier `σ`, expected batch size `L` and step budget `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sigma: f64,
    expected_batch: f64,
    steps: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, expected_batch: f64, steps: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid!("noise multiplier must be non-negative, got {sigma}"));
        }
        if !(expected_batch > 0.0 && expected_batch.is_finite()) {
            return Err(invalid!("expected batch size must be positive, got {expected_batch}"));
        }
        Ok(Self { sigma, expected_batch, steps })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn expected_batch(&self) -> f64 {
        self.expected_batch
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// `g / max(1, ‖g‖ / C)`; returns `g` unchanged when `‖g‖ <= C`.
pub fn clip_gradient(g: &GradVector, spec: &ClipSpec) -> Result<GradVector> {
    if !g.is_finite() {
        return Err(invalid!("cannot clip a non-finite gradient"));
    }
    let norm = l2_norm(g);
    Ok(scale_to_norm(g.clone(), norm, spec.max_norm))
}

fn scale_to_norm(mut g: GradVector, norm: f64, max_norm: f64) -> GradVector {
    if norm > max_norm {
        let factor = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= factor);
    }
    g
}

/// Frobenius norm of the per-example dense-layer gradient `e aᵀ` (plus the
/// bias gradient `e`), computed as `√((a·a)(e·e) + e·e)` without forming the
/// outer product.
pub fn ghost_norm_dense(activation: &[f64], output_grad: &[f64], include_bias: bool) -> f64 {
    libm::sqrt(ghost_norm_sq(activation, output_grad, include_bias))
}

fn ghost_norm_sq(a: &[f64], e: &[f64], include_bias: bool) -> f64 {
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let ee: f64 = e.iter().map(|x| x * x).sum();
    if include_bias {
        aa * ee + ee
    } else {
        aa * ee
    }
}

/// Whole-model per-example gradient norm from dense-layer traces.
pub fn ghost_norm(traces: &[LayerTrace]) -> f64 {
    libm::sqrt(traces.iter().map(|t| ghost_norm_sq(&t.activation, &t.output_grad, t.has_bias)).sum())
}

/// `d` standard normal draws by the Box-Muller transform.
pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d + 1);
    while out.len() < d {
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let (s, c) = libm::sincos(core::f64::consts::TAU * u2);
        out.push(r * c);
        out.push(r * s);
    }
    out.truncate(d);
    out
}

/// How per-example gradient norms are obtained for clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipMethod {
    /// Norm of the materialized per-example gradient.
    #[default]
    PerExample,
    /// Ghost norms from dense-layer traces; the model must provide them.
    Ghost,
}

/// Order in which clipped gradients are summed inside a physical batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accumulation {
    /// Left to right; the canonical order for bitwise comparisons.
    #[default]
    Sequential,
    /// Pairwise tree reduction, matching what a parallel reducer produces.
    Tree,
}

/// Hyperparameters of a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub clip: ClipSpec,
    pub noise: NoiseSpec,
    pub learning_rate: f64,
    pub clip_method: ClipMethod,
    pub accumulation: Accumulation,
}

impl StepConfig {
    pub fn new(clip: ClipSpec, noise: NoiseSpec, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {learning_rate}"));
        }
        Ok(Self {
            clip,
            noise,
            learning_rate,
            clip_method: ClipMethod::default(),
            accumulation: Accumulation::default(),
        })
    }

    pub fn with_clip_method(mut self, method: ClipMethod) -> Self {
        self.clip_method = method;
        self
    }

    pub fn with_accumulation(mut self, accumulation: Accumulation) -> Self {
        self.accumulation = accumulation;
        self
    }
}

/// The examples a step runs over.
#[derive(Debug, Clone, Copy)]
pub enum StepBatch<'a> {
    /// A padded plan; gradients of mask-0 positions are computed and zeroed.
    Masked(&'a BatchPlan),
    /// Exactly these examples, chunked into physical batches of at most
    /// `physical_batch` (the last one may be short).
    Exact { indices: &'a [usize], physical_batch: usize },
}

/// Telemetry for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Mask-active examples `b`.
    pub true_size: usize,
    /// Examples whose gradients were computed (`b₊` for masked plans).
    pub padded_size: usize,
    /// Pre-clip gradient norms over active examples; `None` when `b = 0`.
    pub norm_min: Option<f64>,
    pub norm_median: Option<f64>,
    pub norm_max: Option<f64>,
    /// Largest post-clip norm over active examples.
    pub clipped_norm_max: Option<f64>,
    pub fraction_clipped: f64,
    pub samples_processed: usize,
    /// Filled in by callers that own a clock.
    pub wall_time: Option<Duration>,
}

/// Computes per-example gradients for a list of indices, in order.
pub trait GradientExecutor {
    fn per_example_grads(
        &self,
        model: &dyn Model,
        params: &[f64],
        data: &Dataset,
        indices: &[usize],
    ) -> Vec<GradVector>;
}

/// Single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl GradientExecutor for Sequential {
    fn per_example_grads(
        &self,
        model: &dyn Model,
        params: &[f64],
        data: &Dataset,
        indices: &[usize],
    ) -> Vec<GradVector> {
        per_example_grads(model, params, data, indices)
    }
}

/// One gradient per index, in input order.
pub fn per_example_grads(model: &dyn Model, params: &[f64], data: &Dataset, indices: &[usize]) -> Vec<GradVector> {
    indices.iter().map(|&i| model.grad(params, data.example(i))).collect()
}

fn check_shapes(model: &dyn Model, params: &[f64], data: &Dataset) -> Result<()> {
    if params.len() != model.num_params() {
        return Err(Error::DimensionMismatch { expected: model.num_params(), actual: params.len() });
    }
    if data.n_features() != model.n_features() {
        return Err(Error::DimensionMismatch { expected: model.n_features(), actual: data.n_features() });
    }
    Ok(())
}

fn tree_sum(mut parts: Vec<Vec<f64>>, dim: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; dim];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut iter = parts.into_iter();
        while let Some(mut left) = iter.next() {
            if let Some(right) = iter.next() {
                left.iter_mut().zip(&right).for_each(|(l, r)| *l += r);
            }
            next.push(left);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

#[derive(Default)]
struct NormStats {
    pre_clip: Vec<f64>,
    clipped_max: f64,
    clipped: usize,
}

impl NormStats {
    fn record(&mut self, pre: f64, post: f64, max_norm: f64) {
        self.pre_clip.push(pre);
        self.clipped_max = self.clipped_max.max(post);
        if pre > max_norm {
            self.clipped += 1;
        }
    }

    fn finish(mut self, report: &mut StepReport) {
        let n = self.pre_clip.len();
        if n == 0 {
            return;
        }
        self.pre_clip.sort_by(f64::total_cmp);
        report.norm_min = Some(self.pre_clip[0]);
        report.norm_max = Some(self.pre_clip[n - 1]);
        report.norm_median = Some(if n % 2 == 1 {
            self.pre_clip[n / 2]
        } else {
            0.5 * (self.pre_clip[n / 2 - 1] + self.pre_clip[n / 2])
        });
        report.clipped_norm_max = Some(self.clipped_max);
        report.fraction_clipped = self.clipped as f64 / n as f64;
    }
}

/// One DP-SGD step. Returns the updated parameters and step telemetry.
///
/// Noise is always drawn (`d` normals from the noise stream), also when
/// `σ = 0` or the batch is empty, so the stream advances identically for
/// every batch shape.
#[allow(clippy::too_many_arguments)]
pub fn dp_sgd_step<E: GradientExecutor + ?Sized>(
    model: &dyn Model,
    params: &ParamVector,
    data: &Dataset,
    step: u64,
    batch: StepBatch<'_>,
    cfg: &StepConfig,
    streams: &mut RngStreams,
    exec: &E,
) -> Result<(ParamVector, StepReport)> {
    check_shapes(model, params, data)?;
    let dim = params.len();
    let max_norm = cfg.clip.max_norm();

    let (indices, mask, chunk, true_size) = match batch {
        StepBatch::Masked(plan) => (plan.indices(), Some(plan.mask()), plan.physical_batch(), plan.true_size()),
        StepBatch::Exact { indices, physical_batch } => {
            if physical_batch == 0 {
                return Err(invalid!("physical batch size must be positive"));
            }
            (indices, None, physical_batch, indices.len())
        }
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(invalid!("example index {bad} out of range for {} examples", data.len()));
    }

    let mut acc = vec![0.0; dim];
    let mut stats = NormStats::default();
    for (batch_no, ids) in indices.chunks(chunk).enumerate() {
        let grads = exec.per_example_grads(model, params, data, ids);
        let mut clipped = Vec::with_capacity(ids.len());
        for (j, (g, &idx)) in grads.into_iter().zip(ids).enumerate() {
            if !g.is_finite() {
                return Err(invalid!("non-finite gradient for example {idx}"));
            }
            let norm = match cfg.clip_method {
                ClipMethod::PerExample => l2_norm(&g),
                ClipMethod::Ghost => {
                    let traces = model
                        .layer_traces(params, data.example(idx))
                        .ok_or_else(|| invalid!("model does not expose dense-layer traces"))?;
                    ghost_norm(&traces)
                }
            };
            let mut g = scale_to_norm(g, norm, max_norm);
            let post = l2_norm(&g);
            let active = match mask {
                Some(m) => {
                    let bit = m[batch_no * chunk + j];
                    let factor = if bit { 1.0 } else { 0.0 };
                    g.iter_mut().for_each(|v| *v *= factor);
                    bit
                }
                None => true,
            };
            if active {
                stats.record(norm, post, max_norm);
            }
            clipped.push(g.into_inner());
        }
        let batch_sum = match cfg.accumulation {
            Accumulation::Sequential => {
                let mut sum = vec![0.0; dim];
                for g in &clipped {
                    sum.iter_mut().zip(g).for_each(|(s, v)| *s += v);
                }
                sum
            }
            Accumulation::Tree => tree_sum(clipped, dim),
        };
        acc.iter_mut().zip(&batch_sum).for_each(|(a, s)| *a += s);
    }

    let noise = standard_normal_vector(streams.noise_stream(), dim);
    let noise_scale = cfg.noise.sigma() * max_norm;
    let inv_l = 1.0 / cfg.noise.expected_batch();
    let lr = cfg.learning_rate;
    let updated: Vec<f64> = params
        .iter()
        .zip(&acc)
        .zip(&noise)
        .map(|((theta, a), z)| theta - lr * ((a + noise_scale * z) * inv_l))
        .collect();

    let mut report = StepReport {
        step,
        true_size,
        padded_size: indices.len(),
        norm_min: None,
        norm_median: None,
        norm_max: None,
        clipped_norm_max: None,
        fraction_clipped: 0.0,
        samples_processed: indices.len(),
        wall_time: None,
    };
    stats.finish(&mut report);
    Ok((ParamVector::from(updated), report))
}

/// How each step's examples are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Poisson batch padded to whole physical batches and masked.
    #[default]
    Masked,
    /// The same Poisson batch, unpadded; the last physical batch may be short.
    ExactPoisson,
    /// Shuffle once per epoch and cut into fixed batches of `round(L)`.
    /// Not Poisson subsampling.
    ShuffleBaseline,
}

/// Mean loss and (for classifiers) accuracy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

pub fn evaluate(model: &dyn Model, params: &[f64], data: &Dataset) -> Result<Metrics> {
    check_shapes(model, params, data)?;
    if data.is_empty() {
        return Err(invalid!("cannot evaluate on an empty dataset"));
    }
    let n = data.len() as f64;
    let loss = data.iter().map(|ex| model.loss(params, ex)).sum::<f64>() / n;
    let accuracy = model.is_classifier().then(|| {
        let correct = data.iter().filter(|ex| (model.predict(params, ex.features) >= 0.5) == (ex.label >= 0.5)).count();
        correct as f64 / n
    });
    Ok(Metrics { loss, accuracy })
}

/// Stateful training loop; one call to [`Trainer::step`] per optimizer step.
pub struct Trainer<'a, E: GradientExecutor> {
    model: &'a dyn Model,
    data: &'a Dataset,
    sampler: SamplerConfig,
    step_cfg: StepConfig,
    mode: SamplingMode,
    exec: E,
    params: ParamVector,
    streams: RngStreams,
    next_step: u64,
    shuffle_queue: Vec<Vec<usize>>,
}

impl<'a, E: GradientExecutor> Trainer<'a, E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a dyn Model,
        data: &'a Dataset,
        sampler: SamplerConfig,
        step_cfg: StepConfig,
        mode: SamplingMode,
        params: ParamVector,
        streams: RngStreams,
        exec: E,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid!("dataset is empty"));
        }
        if sampler.dataset_size() != data.len() {
            return Err(invalid!(
                "sampler expects {} examples but the dataset has {}",
                sampler.dataset_size(),
                data.len()
            ));
        }
        check_shapes(model, &params, data)?;
        Ok(Self {
            model,
            data,
            sampler,
            step_cfg,
            mode,
            exec,
            params,
            streams,
            next_step: 0,
            shuffle_queue: Vec::new(),
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.next_step
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let t = self.next_step;
        self.streams.begin_step(t);
        let p = self.sampler.physical_batch();
        let (params, report) = match self.mode {
            SamplingMode::Masked => {
                let plan = build_batch_plan(&self.sampler, &mut self.streams);
                self.run(t, StepBatch::Masked(&plan))?
            }
            SamplingMode::ExactPoisson => {
                let indices = draw_poisson_batch(&self.sampler, &mut self.streams);
                self.run(t, StepBatch::Exact { indices: &indices, physical_batch: p })?
            }
            SamplingMode::ShuffleBaseline => {
                if self.shuffle_queue.is_empty() {
                    let size = (libm::round(self.sampler.expected_batch()) as usize).max(1);
                    let mut batches =
                        shuffle_batches_reference(self.sampler.dataset_size(), size, self.streams.wor_stream())?;
                    batches.reverse();
                    self.shuffle_queue = batches;
                }
                let indices = self.shuffle_queue.pop().unwrap_or_default();
                self.run(t, StepBatch::Exact { indices: &indices, physical_batch: p })?
            }
        };
        self.params = params;
        self.next_step += 1;
        Ok(report)
    }

    fn run(&mut self, t: u64, batch: StepBatch<'_>) -> Result<(ParamVector, StepReport)> {
        dp_sgd_step(self.model, &self.params, self.data, t, batch, &self.step_cfg, &mut self.streams, &self.exec)
    }
}

/// Runs `steps` steps and returns the final parameters with per-step reports.
#[allow(clippy::too_many_arguments)]
pub fn train<E: GradientExecutor>(
    model: &dyn Model,
    data: &Dataset,
    sampler: SamplerConfig,
    step_cfg: StepConfig,
    mode: SamplingMode,
    init: ParamVector,
    steps: u64,
    streams: RngStreams,
    exec: E,
) -> Result<(ParamVector, Vec<StepReport>)> {
    let mut trainer = Trainer::new(model, data, sampler, step_cfg, mode, init, streams, exec)?;
    let reports = (0..steps).map(|_| trainer.step()).collect::<Result<Vec<_>>>()?;
    Ok((trainer.into_params(), reports))
}

#[cfg(test)]
mod tests;
