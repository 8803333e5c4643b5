//! Chi-square test of the masked sampler's active set against the law of
//! independent Bernoulli(q) inclusion over all `2^n` subsets.

use dp_batcher_core::sampling::{build_batch_plan, SamplerConfig};
use dp_batcher_core::RngStreams;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Largest dataset size with an enumerable subset space.
pub const MAX_SUBSET_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl ChiSquareOutcome {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Probability of each subset, indexed by bitmask.
pub fn subset_law(n: usize, q: f64) -> Vec<f64> {
    (0..1u32 << n)
        .map(|mask| {
            let k = mask.count_ones() as i32;
            q.powi(k) * (1.0 - q).powi(n as i32 - k)
        })
        .collect()
}

/// Pearson goodness of fit. Cells with zero probability are dropped unless
/// observed, in which case the fit is rejected outright.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> ChiSquareOutcome {
    let total = counts.iter().sum::<u64>() as f64;
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in counts.iter().zip(probs) {
        if p > 0.0 {
            let e = p * total;
            statistic += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            statistic = f64::INFINITY;
        }
    }
    let df = cells.saturating_sub(1);
    let p_value = if statistic.is_infinite() {
        0.0
    } else if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(statistic)
    };
    ChiSquareOutcome { statistic, df, p_value }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerCheck {
    pub dataset_size: usize,
    /// Rate of the law under test.
    pub rate: f64,
    /// Rate the sampler is configured with; equal to `rate` except in
    /// negative controls.
    pub sampler_rate: f64,
    pub physical_batch: usize,
    pub draws: u64,
    pub seed: u64,
}

impl SamplerCheck {
    pub fn new(dataset_size: usize, rate: f64, draws: u64, seed: u64) -> Self {
        Self { dataset_size, rate, sampler_rate: rate, physical_batch: 1, draws, seed }
    }

    pub fn run(&self) -> Result<ChiSquareOutcome> {
        let n = self.dataset_size;
        if n == 0 || n > MAX_SUBSET_N {
            return Err(Error::Input(format!("--n must be in 1..={MAX_SUBSET_N}, got {n}")));
        }
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::Input(format!("rate must be in (0, 1], got {}", self.rate)));
        }
        if self.draws == 0 {
            return Err(Error::Input("need at least one draw".into()));
        }
        let cfg = SamplerConfig::from_rate(n, self.sampler_rate, self.physical_batch)?;
        let mut streams = RngStreams::new(self.seed);
        let mut counts = vec![0u64; 1 << n];
        for _ in 0..self.draws {
            let plan = build_batch_plan(&cfg, &mut streams);
            let mask = plan.active_indices().iter().fold(0usize, |m, &i| m | (1 << i));
            counts[mask] += 1;
        }
        Ok(chi_square(&counts, &subset_law(n, self.rate)))
    }
}
