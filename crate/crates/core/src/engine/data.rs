use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::invalid;
use crate::Result;

/// One training example: a feature row and its label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: f64,
}

/// Dense in-memory dataset stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(n_features: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if n_features == 0 {
            return Err(invalid!("dataset needs at least one feature column"));
        }
        if features.len() != n_features * labels.len() {
            return Err(invalid!(
                "{} feature values do not form {} rows of {n_features}",
                features.len(),
                labels.len()
            ));
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(invalid!("dataset contains non-finite values"));
        }
        Ok(Self { n_features, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        let row = &self.features[i * self.n_features..(i + 1) * self.n_features];
        Example { features: row, label: self.labels[i] }
    }

    pub fn features_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = Example<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }
}

fn gaussian_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let (s, c) = libm::sincos(core::f64::consts::TAU * u2);
    (r * c, r * s)
}

/// Two Gaussian blobs separated by a margin along a random unit direction;
/// labels are 0/1 and the classes are linearly separable.
pub fn linearly_separable(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(invalid!("need at least one row and one feature"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut direction: Vec<f64> = (0..dim).map(|_| gaussian_pair(&mut rng).0).collect();
    let norm = libm::sqrt(direction.iter().map(|v| v * v).sum());
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as f64;
        let sign = if label == 1.0 { 1.0 } else { -1.0 };
        let mut row: Vec<f64> = (0..dim).map(|_| 0.5 * gaussian_pair(&mut rng).0).collect();
        // Remove the component along the separating direction, then set it
        // to a signed offset of at least 0.5.
        let along: f64 = row.iter().zip(&direction).map(|(x, d)| x * d).sum();
        let offset = sign * (0.5 + 1.5 * rng.random::<f64>());
        for (x, d) in row.iter_mut().zip(&direction) {
            *x += (offset - along) * d;
        }
        features.extend_from_slice(&row);
        labels.push(label);
    }
    Dataset::new(dim, features, labels)
}

/// `y = w·x + b + noise` with fixed random weights.
pub fn linear_regression(n: usize, dim: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(invalid!("need at least one row and one feature"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..dim).map(|_| gaussian_pair(&mut rng).0).collect();
    let bias = gaussian_pair(&mut rng).0;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| gaussian_pair(&mut rng).0).collect();
        let y = row.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() + bias;
        labels.push(y + noise * gaussian_pair(&mut rng).0);
        features.extend_from_slice(&row);
    }
    Dataset::new(dim, features, labels)
}
