//! Deterministic sweeps of the expected excess-gradient analysis.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::RangeInclusive;

use crate::binom::{
    excess_upper_bound, expected_excess_masked_with, expected_excess_truncated_with, BinomialTable, Method, Truncation,
    TruncationSpec,
};
use crate::error::invalid;
use crate::Result;

/// Grid for [`sweep_excess`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub dataset_size: u64,
    pub rates: Vec<f64>,
    pub physical_batches: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub tau: f64,
    /// Passes over the data; `T = round(epochs · N / L)`, at least 1.
    pub epochs: f64,
    pub methods: Vec<Method>,
    pub truncation: Truncation,
}

impl SweepConfig {
    /// `q = 0.01, 0.02, ..., 1.00`.
    pub fn default_rates() -> Vec<f64> {
        (1..=100).map(|k| k as f64 / 100.0).collect()
    }

    /// N = 50 000, q over `0.01..=1.0`, p ∈ {64, 256, 1024}, ε ∈ {1, 8},
    /// δ = τ = 1e-5, 40 epochs, all three methods.
    pub fn reference() -> Self {
        Self {
            dataset_size: 50_000,
            rates: Self::default_rates(),
            physical_batches: alloc::vec![64, 256, 1024],
            epsilons: alloc::vec![1.0, 8.0],
            delta: 1e-5,
            tau: 1e-5,
            epochs: 40.0,
            methods: alloc::vec![Method::Masked, Method::Truncated, Method::UpperBound],
            truncation: Truncation::Upper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 {
            return Err(invalid!("dataset size must be positive"));
        }
        if self.rates.is_empty() || self.methods.is_empty() {
            return Err(invalid!("rate grid and method list must be nonempty"));
        }
        if let Some(q) = self.rates.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
            return Err(invalid!("rates must lie in (0, 1], got {q}"));
        }
        let needs_p = self.methods.iter().any(|m| matches!(m, Method::Masked | Method::UpperBound));
        if needs_p && self.physical_batches.is_empty() {
            return Err(invalid!("physical batch list must be nonempty"));
        }
        if self.physical_batches.contains(&0) {
            return Err(invalid!("physical batch sizes must be positive"));
        }
        if self.methods.contains(&Method::Truncated) {
            if self.epsilons.is_empty() {
                return Err(invalid!("epsilon list must be nonempty for the truncated method"));
            }
            if !(self.epochs > 0.0 && self.epochs.is_finite()) {
                return Err(invalid!("epochs must be positive, got {}", self.epochs));
            }
        }
        Ok(())
    }

    /// `round(epochs · N / L)` with `L = qN`, at least 1.
    pub fn steps_for_rate(&self, rate: f64) -> u64 {
        (libm::round(self.epochs / rate) as u64).max(1)
    }
}

/// One sweep output row. Inapplicable columns are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessRow {
    pub method: Method,
    pub dataset_size: u64,
    pub rate: f64,
    pub physical_batch: Option<usize>,
    pub epsilon: Option<f64>,
    pub steps: Option<u64>,
    pub expected_excess: f64,
    /// Absolute bound `p - 1` on the masked excess.
    pub upper_bound: Option<f64>,
}

impl ExcessRow {
    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        let by_param = |r: &Self| match r.method {
            Method::Truncated => r.epsilon.unwrap_or(0.0),
            _ => r.physical_batch.unwrap_or(0) as f64,
        };
        self.method
            .cmp(&other.method)
            .then(by_param(self).total_cmp(&by_param(other)))
            .then(self.rate.total_cmp(&other.rate))
    }
}

/// Rows sorted by `(method, p or ε, q)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExcessCurve {
    rows: Vec<ExcessRow>,
}

impl ExcessCurve {
    pub fn from_rows(mut rows: Vec<ExcessRow>) -> Self {
        rows.sort_by(ExcessRow::sort_key_cmp);
        Self { rows }
    }

    pub fn rows(&self) -> &[ExcessRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

/// Evaluates every requested method at every grid point.
pub fn sweep_excess(cfg: &SweepConfig) -> Result<ExcessCurve> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &q in &cfg.rates {
        rows.extend(sweep_rate(cfg, q)?);
    }
    Ok(ExcessCurve::from_rows(rows))
}

/// All rows for a single rate; grid points are independent, so callers may
/// evaluate rates in parallel and hand the rows to [`ExcessCurve::from_rows`].
pub fn sweep_rate(cfg: &SweepConfig, q: f64) -> Result<Vec<ExcessRow>> {
    let n = cfg.dataset_size;
    let expected_batch = q * n as f64;
    let table = BinomialTable::new(n, q)?;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        match method {
            Method::Masked => {
                for &p in &cfg.physical_batches {
                    let r = expected_excess_masked_with(&table, p);
                    rows.push(ExcessRow {
                        method,
                        dataset_size: n,
                        rate: q,
                        physical_batch: Some(p),
                        epsilon: None,
                        steps: None,
                        expected_excess: r.expected_excess,
                        upper_bound: Some((p - 1) as f64),
                    });
                }
            }
            Method::UpperBound => {
                for &p in &cfg.physical_batches {
                    let ratio = excess_upper_bound(p, expected_batch)?;
                    let absolute = ratio * expected_batch - expected_batch;
                    rows.push(ExcessRow {
                        method,
                        dataset_size: n,
                        rate: q,
                        physical_batch: Some(p),
                        epsilon: None,
                        steps: None,
                        expected_excess: absolute,
                        upper_bound: Some((p - 1) as f64),
                    });
                }
            }
            Method::Truncated => {
                let steps = cfg.steps_for_rate(q);
                for &eps in &cfg.epsilons {
                    let spec = TruncationSpec::new(n, expected_batch, steps, eps, cfg.delta, cfg.tau)?
                        .with_truncation(cfg.truncation);
                    let r = expected_excess_truncated_with(&table, &spec)?;
                    rows.push(ExcessRow {
                        method,
                        dataset_size: n,
                        rate: q,
                        physical_batch: None,
                        epsilon: Some(eps),
                        steps: Some(steps),
                        expected_excess: r.expected_excess,
                        upper_bound: None,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Masked excess as a function of the physical batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalBatchCurve {
    pub curve: ExcessCurve,
    /// For each row, the best `p` seen so far (ties toward larger `p`).
    pub running_argmin: Vec<usize>,
}

impl PhysicalBatchCurve {
    /// Overall argmin and its excess.
    pub fn best(&self) -> Option<(usize, f64)> {
        let p = *self.running_argmin.last()?;
        let row = self.curve.rows().iter().find(|r| r.physical_batch == Some(p))?;
        Some((p, row.expected_excess))
    }
}

pub fn sweep_physical_batch(n: u64, q: f64, range: RangeInclusive<usize>) -> Result<PhysicalBatchCurve> {
    if *range.start() == 0 || range.is_empty() {
        return Err(invalid!("physical batch range must be nonempty and start at 1 or above"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid!("rate must lie in (0, 1], got {q}"));
    }
    let table = BinomialTable::new(n, q)?;
    let mut rows = Vec::with_capacity(range.clone().count());
    let mut running_argmin = Vec::with_capacity(rows.capacity());
    let mut best = (0usize, f64::INFINITY);
    for p in range {
        let r = expected_excess_masked_with(&table, p);
        if r.expected_excess <= best.1 {
            best = (p, r.expected_excess);
        }
        running_argmin.push(best.0);
        rows.push(ExcessRow {
            method: Method::Masked,
            dataset_size: n,
            rate: q,
            physical_batch: Some(p),
            epsilon: None,
            steps: None,
            expected_excess: r.expected_excess,
            upper_bound: Some((p - 1) as f64),
        });
    }
    Ok(PhysicalBatchCurve { curve: ExcessCurve::from_rows(rows), running_argmin })
}
