//! Small models with hand-derived per-example gradients.
//!
//! Every model here is a stack of dense layers, so each also reports the
//! per-layer `(activation, output gradient)` pairs needed for ghost norms.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::Example;
use super::{GradVector, ParamVector};

/// Inputs and backpropagated output gradients of one dense layer for one example.
///
/// The layer's per-example weight gradient is `output_grad ⊗ activation`
/// (plus `output_grad` for the bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub activation: Vec<f64>,
    pub output_grad: Vec<f64>,
    pub has_bias: bool,
}

/// A differentiable model with per-example losses and gradients.
pub trait Model: Sync {
    /// Parameter dimension.
    fn num_params(&self) -> usize;

    fn n_features(&self) -> usize;

    fn init_params(&self, seed: u64) -> ParamVector;

    fn loss(&self, params: &[f64], example: Example<'_>) -> f64;

    fn grad(&self, params: &[f64], example: Example<'_>) -> GradVector;

    /// Raw prediction: the regression output or the class-1 probability.
    fn predict(&self, params: &[f64], features: &[f64]) -> f64;

    fn is_classifier(&self) -> bool;

    /// Dense-layer traces for ghost norms, if the model supports them.
    fn layer_traces(&self, _params: &[f64], _example: Example<'_>) -> Option<Vec<LayerTrace>> {
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z) - y z`, the logistic loss on a logit.
fn logistic_loss(z: f64, y: f64) -> f64 {
    let softplus = z.max(0.0) + libm::log1p(libm::exp(-libm::fabs(z)));
    softplus - y * z
}

/// Squared-error linear regression, parameters `[w..., b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearRegression {
    n_features: usize,
}

impl LinearRegression {
    pub fn new(n_features: usize) -> Self {
        Self { n_features }
    }

    fn residual(&self, params: &[f64], ex: Example<'_>) -> f64 {
        self.predict(params, ex.features) - ex.label
    }
}

impl Model for LinearRegression {
    fn num_params(&self) -> usize {
        self.n_features + 1
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn init_params(&self, _seed: u64) -> ParamVector {
        ParamVector::zeros(self.num_params())
    }

    fn loss(&self, params: &[f64], ex: Example<'_>) -> f64 {
        let r = self.residual(params, ex);
        0.5 * r * r
    }

    fn grad(&self, params: &[f64], ex: Example<'_>) -> GradVector {
        let r = self.residual(params, ex);
        let mut g: Vec<f64> = ex.features.iter().map(|x| r * x).collect();
        g.push(r);
        GradVector::from(g)
    }

    fn predict(&self, params: &[f64], features: &[f64]) -> f64 {
        dot(&params[..self.n_features], features) + params[self.n_features]
    }

    fn is_classifier(&self) -> bool {
        false
    }

    fn layer_traces(&self, params: &[f64], ex: Example<'_>) -> Option<Vec<LayerTrace>> {
        Some(vec![LayerTrace {
            activation: ex.features.to_vec(),
            output_grad: vec![self.residual(params, ex)],
            has_bias: true,
        }])
    }
}

/// Binary logistic regression on 0/1 labels, parameters `[w..., b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogisticRegression {
    n_features: usize,
}

impl LogisticRegression {
    pub fn new(n_features: usize) -> Self {
        Self { n_features }
    }

    fn logit(&self, params: &[f64], features: &[f64]) -> f64 {
        dot(&params[..self.n_features], features) + params[self.n_features]
    }
}

impl Model for LogisticRegression {
    fn num_params(&self) -> usize {
        self.n_features + 1
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn init_params(&self, _seed: u64) -> ParamVector {
        ParamVector::zeros(self.num_params())
    }

    fn loss(&self, params: &[f64], ex: Example<'_>) -> f64 {
        logistic_loss(self.logit(params, ex.features), ex.label)
    }

    fn grad(&self, params: &[f64], ex: Example<'_>) -> GradVector {
        let r = sigmoid(self.logit(params, ex.features)) - ex.label;
        let mut g: Vec<f64> = ex.features.iter().map(|x| r * x).collect();
        g.push(r);
        GradVector::from(g)
    }

    fn predict(&self, params: &[f64], features: &[f64]) -> f64 {
        sigmoid(self.logit(params, features))
    }

    fn is_classifier(&self) -> bool {
        true
    }

    fn layer_traces(&self, params: &[f64], ex: Example<'_>) -> Option<Vec<LayerTrace>> {
        let r = sigmoid(self.logit(params, ex.features)) - ex.label;
        Some(vec![LayerTrace { activation: ex.features.to_vec(), output_grad: vec![r], has_bias: true }])
    }
}

/// One hidden `tanh` layer and a logistic output.
///
/// Parameter layout: `W1` (`hidden × n_features`, row-major), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    n_features: usize,
    hidden: usize,
}

struct Forward {
    hidden: Vec<f64>,
    logit: f64,
}

impl Mlp {
    pub fn new(n_features: usize, hidden: usize) -> Self {
        Self { n_features, hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64], &'p [f64], f64) {
        let (w1, rest) = params.split_at(self.hidden * self.n_features);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        (w1, b1, w2, rest[0])
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Forward {
        let (w1, b1, w2, b2) = self.split(params);
        let hidden: Vec<f64> =
            w1.chunks_exact(self.n_features).zip(b1).map(|(row, b)| libm::tanh(dot(row, x) + b)).collect();
        let logit = dot(w2, &hidden) + b2;
        Forward { hidden, logit }
    }

    /// Output residual and hidden-layer pre-activation gradients.
    fn backward(&self, params: &[f64], fwd: &Forward, label: f64) -> (f64, Vec<f64>) {
        let (_, _, w2, _) = self.split(params);
        let r = sigmoid(fwd.logit) - label;
        let delta = fwd.hidden.iter().zip(w2).map(|(h, w)| r * w * (1.0 - h * h)).collect();
        (r, delta)
    }
}

impl Model for Mlp {
    fn num_params(&self) -> usize {
        self.hidden * self.n_features + 2 * self.hidden + 1
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale_in = 1.0 / libm::sqrt(self.n_features as f64);
        let scale_out = 1.0 / libm::sqrt(self.hidden as f64);
        let mut p = Vec::with_capacity(self.num_params());
        p.extend((0..self.hidden * self.n_features).map(|_| scale_in * rng.random_range(-1.0..1.0)));
        p.extend(core::iter::repeat(0.0).take(self.hidden));
        p.extend((0..self.hidden).map(|_| scale_out * rng.random_range(-1.0..1.0)));
        p.push(0.0);
        ParamVector::from(p)
    }

    fn loss(&self, params: &[f64], ex: Example<'_>) -> f64 {
        logistic_loss(self.forward(params, ex.features).logit, ex.label)
    }

    fn grad(&self, params: &[f64], ex: Example<'_>) -> GradVector {
        let fwd = self.forward(params, ex.features);
        let (r, delta) = self.backward(params, &fwd, ex.label);
        let mut g = Vec::with_capacity(self.num_params());
        for d in &delta {
            g.extend(ex.features.iter().map(|x| d * x));
        }
        g.extend_from_slice(&delta);
        g.extend(fwd.hidden.iter().map(|h| r * h));
        g.push(r);
        GradVector::from(g)
    }

    fn predict(&self, params: &[f64], features: &[f64]) -> f64 {
        sigmoid(self.forward(params, features).logit)
    }

    fn is_classifier(&self) -> bool {
        true
    }

    fn layer_traces(&self, params: &[f64], ex: Example<'_>) -> Option<Vec<LayerTrace>> {
        let fwd = self.forward(params, ex.features);
        let (r, delta) = self.backward(params, &fwd, ex.label);
        Some(vec![
            LayerTrace { activation: ex.features.to_vec(), output_grad: delta, has_bias: true },
            LayerTrace { activation: fwd.hidden, output_grad: vec![r], has_bias: true },
        ])
    }
}
