//! Binomial numerics and the expected-excess cost analysis.
//!
//! The log-pmf uses Loader's saddle-point expansion (Stirling remainder plus
//! the deviance term `bd0`), which stays accurate to a few ulps of the
//! exponent even where plain log-gamma differences cancel badly
//! (`N = 5·10⁴`, `ln Γ ≈ 5·10⁵`). Tail sums are Neumaier-compensated and
//! always taken over the smaller tail.

use alloc::vec::Vec;
use core::ops::RangeInclusive;

use crate::error::invalid;
use crate::sampling::round_up_to_physical;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Error term of Stirling's formula, `ln n! - (n + ½) ln n + n - ln √(2π)`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;

    if n <= 15.0 {
        let ln_fact = if n == libm::floor(n) {
            // n! <= 15! is exact in f64
            let mut f = 1.0;
            let mut k = 2.0;
            while k <= n {
                f *= k;
                k += 1.0;
            }
            libm::log(f)
        } else {
            libm::lgamma(n + 1.0)
        };
        return ln_fact - (n + 0.5) * libm::log(n) + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / m) + m - x`, evaluated by series near `x = m`.
fn bd0(x: f64, m: f64) -> f64 {
    if libm::fabs(x - m) < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        if libm::fabs(s) < f64::MIN_POSITIVE {
            return s;
        }
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
    }
    x * libm::log(x / m) + m - x
}

fn log_pmf_unchecked(n: u64, q: f64, i: u64) -> f64 {
    let p = q;
    let r = 1.0 - q;
    if p == 0.0 {
        return if i == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if r == 0.0 {
        return if i == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if i == 0 {
        return if p < 0.1 { -bd0(nf, nf * r) - nf * p } else { nf * libm::log1p(-p) };
    }
    if i == n {
        return if r < 0.1 { -bd0(nf, nf * p) - nf * r } else { nf * libm::log(p) };
    }
    let x = i as f64;
    let lc = stirlerr(nf) - stirlerr(x) - stirlerr(nf - x) - bd0(x, nf * p) - bd0(nf - x, nf * r);
    let lf = LN_2PI + libm::log(x) + libm::log1p(-x / nf);
    lc - 0.5 * lf
}

fn check_rate(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(invalid!("rate must lie in [0, 1], got {q}"))
    }
}

/// `ln Pr(b = i)` for `b ~ Binomial(n, q)`.
pub fn log_binom_pmf(n: u64, q: f64, i: u64) -> Result<f64> {
    check_rate(q)?;
    if i > n {
        return Err(invalid!("outcome {i} exceeds trial count {n}"));
    }
    Ok(log_pmf_unchecked(n, q, i))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if libm::fabs(self.sum) >= libm::fabs(x) {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `ln Σ_{i ∈ range} Pr(b = i)`, scaled by the largest term to stay in range.
fn log_sum_pmf(n: u64, q: f64, range: RangeInclusive<u64>, peak: u64) -> f64 {
    let l_peak = log_pmf_unchecked(n, q, peak);
    if l_peak == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = CompensatedSum::default();
    for i in range {
        let l = log_pmf_unchecked(n, q, i);
        let term = libm::exp(l - l_peak);
        acc.add(term);
        // Terms decay geometrically away from the peak; stop once negligible.
        if term < 1e-300 {
            break;
        }
    }
    l_peak + libm::log(acc.value())
}

fn mode(n: u64, q: f64) -> u64 {
    (libm::floor((n as f64 + 1.0) * q) as u64).min(n)
}

/// `ln Pr(b > bound)`; `-inf` when `bound >= n`.
pub fn log_binom_survival(n: u64, q: f64, bound: u64) -> Result<f64> {
    check_rate(q)?;
    if bound >= n {
        return Ok(f64::NEG_INFINITY);
    }
    if bound + 1 >= mode(n, q) {
        // Upper tail is the smaller one; its largest term is at bound + 1.
        Ok(log_sum_pmf(n, q, bound + 1..=n, bound + 1))
    } else {
        let cdf = libm::exp(log_sum_lower(n, q, bound));
        Ok(libm::log1p(-cdf))
    }
}

/// `ln Pr(b <= bound)`, summed downward from `bound`.
fn log_sum_lower(n: u64, q: f64, bound: u64) -> f64 {
    let l_peak = log_pmf_unchecked(n, q, bound);
    if l_peak == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = CompensatedSum::default();
    for i in (0..=bound).rev() {
        let term = libm::exp(log_pmf_unchecked(n, q, i) - l_peak);
        acc.add(term);
        if term < 1e-300 {
            break;
        }
    }
    l_peak + libm::log(acc.value())
}

/// Survival function `Ψ(n, q, bound) = Pr(b > bound)`.
pub fn binom_survival(n: u64, q: f64, bound: u64) -> Result<f64> {
    check_rate(q)?;
    if bound >= n {
        return Ok(0.0);
    }
    if bound + 1 >= mode(n, q) {
        Ok(libm::exp(log_sum_pmf(n, q, bound + 1..=n, bound + 1)))
    } else {
        Ok(1.0 - libm::exp(log_sum_lower(n, q, bound)))
    }
}

/// Full pmf of `Binomial(n, q)` with compensated prefix and suffix sums.
///
/// Building the table is one pass over `0..=n`; afterwards pmf, cdf and
/// survival lookups are O(1). Sweeps that evaluate many physical batch sizes
/// or truncation bounds at one rate share a single table.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    n: u64,
    q: f64,
    pmf: Vec<f64>,
    // lower[i] = Pr(b <= i), upper[i] = Pr(b >= i)
    lower: Vec<f64>,
    upper: Vec<f64>,
    mode: u64,
}

impl BinomialTable {
    pub fn new(n: u64, q: f64) -> Result<Self> {
        check_rate(q)?;
        let len = usize::try_from(n).map_err(|_| invalid!("trial count {n} too large"))? + 1;
        let pmf: Vec<f64> = (0..=n).map(|i| libm::exp(log_pmf_unchecked(n, q, i))).collect();

        let mut lower = Vec::with_capacity(len);
        let mut acc = CompensatedSum::default();
        for &p in &pmf {
            acc.add(p);
            lower.push(acc.value());
        }
        let mut upper = alloc::vec![0.0; len];
        let mut acc = CompensatedSum::default();
        for i in (0..len).rev() {
            acc.add(pmf[i]);
            upper[i] = acc.value();
        }
        Ok(Self { n, q, pmf, lower, upper, mode: mode(n, q) })
    }

    pub fn trials(&self) -> u64 {
        self.n
    }

    pub fn rate(&self) -> f64 {
        self.q
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.n as f64 * self.q
    }

    /// `Pr(b <= bound)`.
    pub fn cdf(&self, bound: u64) -> f64 {
        if bound >= self.n {
            return 1.0;
        }
        if bound + 1 >= self.mode {
            1.0 - self.upper[bound as usize + 1]
        } else {
            self.lower[bound as usize]
        }
    }

    /// `Pr(b > bound)`.
    pub fn survival(&self, bound: u64) -> f64 {
        if bound >= self.n {
            return 0.0;
        }
        if bound + 1 >= self.mode {
            self.upper[bound as usize + 1]
        } else {
            1.0 - self.lower[bound as usize]
        }
    }

    /// `Pr(b < bound)`.
    fn below(&self, bound: u64) -> f64 {
        if bound == 0 {
            0.0
        } else {
            self.cdf(bound - 1)
        }
    }

    /// `E[b₊ - b]` for padding up to multiples of `p`.
    pub fn expected_padding(&self, p: usize) -> f64 {
        assert!(p >= 1, "physical batch size must be positive");
        let mut acc = CompensatedSum::default();
        for (i, &mass) in self.pmf.iter().enumerate() {
            let pad = round_up_to_physical(i, p) - i;
            if pad != 0 {
                acc.add(mass * pad as f64);
            }
        }
        acc.value()
    }

    /// `E[b | lo <= b <= hi]`.
    fn conditional_mean(&self, lo: u64, hi: u64) -> f64 {
        let mut mass = CompensatedSum::default();
        let mut first = CompensatedSum::default();
        for i in lo..=hi {
            let p = self.pmf[i as usize];
            mass.add(p);
            first.add(p * i as f64);
        }
        first.value() / mass.value()
    }
}

/// Which tails the truncated-Binomial sampler cuts off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncation {
    /// Keep `b <= B₊`.
    #[default]
    Upper,
    /// Keep `B₋ <= b <= B₊`, with the lower tail held to the same budget.
    TwoSided,
}

/// Parameters of the truncated-Binomial batch-size bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSpec {
    dataset_size: u64,
    expected_batch: f64,
    steps: u64,
    epsilon: f64,
    delta: f64,
    tau: f64,
    truncation: Truncation,
}

impl TruncationSpec {
    pub fn new(dataset_size: u64, expected_batch: f64, steps: u64, epsilon: f64, delta: f64, tau: f64) -> Result<Self> {
        if dataset_size == 0 {
            return Err(invalid!("dataset size must be positive"));
        }
        if !(expected_batch > 0.0 && expected_batch <= dataset_size as f64) {
            return Err(invalid!("expected batch must lie in (0, N], got {expected_batch}"));
        }
        if steps == 0 {
            return Err(invalid!("step count must be at least 1"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid!("epsilon must be positive, got {epsilon}"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid!("delta must lie in (0, 1), got {delta}"));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(invalid!("tau must lie in (0, 1), got {tau}"));
        }
        Ok(Self { dataset_size, expected_batch, steps, epsilon, delta, tau, truncation: Truncation::Upper })
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn dataset_size(&self) -> u64 {
        self.dataset_size
    }

    pub fn expected_batch(&self) -> f64 {
        self.expected_batch
    }

    pub fn rate(&self) -> f64 {
        (self.expected_batch / self.dataset_size as f64).min(1.0)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Largest tail mass allowed: `τδ / (T (1 + e^ε))`.
    pub fn tail_budget(&self) -> f64 {
        self.tau * self.delta / (self.steps as f64 * (1.0 + libm::exp(self.epsilon)))
    }
}

/// Smallest `B` in `0..=N` with `Ψ(N, L, B) · T · (1 + e^ε) <= τδ`.
pub fn truncation_bound(spec: &TruncationSpec) -> Result<u64> {
    let table = BinomialTable::new(spec.dataset_size, spec.rate())?;
    truncation_bound_with(&table, spec)
}

/// [`truncation_bound`] against a prebuilt table for `Binomial(N, L/N)`.
pub fn truncation_bound_with(table: &BinomialTable, spec: &TruncationSpec) -> Result<u64> {
    let budget = spec.tail_budget();
    let holds = |b: u64| table.survival(b) <= budget;
    let (mut lo, mut hi) = (0u64, table.trials());
    if !holds(hi) {
        return Err(Error::Internal("survival at N is positive"));
    }
    // Ψ is non-increasing, so the predicate is monotone in B.
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Largest `B` with `Pr(b < B) · T · (1 + e^ε) <= τδ`; used by two-sided truncation.
pub fn lower_truncation_bound_with(table: &BinomialTable, spec: &TruncationSpec) -> u64 {
    let budget = spec.tail_budget();
    let (mut lo, mut hi) = (0u64, table.trials());
    // Pr(b < B) is non-decreasing; find the last B where it stays in budget.
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if table.below(mid) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Cost-analysis method a result refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Masked,
    Truncated,
    UpperBound,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Masked => "masked",
            Method::Truncated => "truncated",
            Method::UpperBound => "upper_bound",
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(Method::Masked),
            "truncated" => Ok(Method::Truncated),
            "upper_bound" | "upper-bound" => Ok(Method::UpperBound),
            other => Err(invalid!("unknown method {other:?}")),
        }
    }
}

/// Expected excess gradients per step, with the parameters that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessResult {
    pub method: Method,
    pub expected_excess: f64,
    pub dataset_size: u64,
    pub rate: f64,
    pub physical_batch: Option<usize>,
    pub epsilon: Option<f64>,
    pub steps: Option<u64>,
    /// Truncation bound `B₊` for the truncated method.
    pub bound: Option<u64>,
}

/// `E[b₊ - b] = Σᵢ Pr(b = i) (roundup(i, p) - i)` for masked padding.
pub fn expected_excess_masked(n: u64, q: f64, p: usize) -> Result<ExcessResult> {
    if p == 0 {
        return Err(invalid!("physical batch size must be positive"));
    }
    let table = BinomialTable::new(n, q)?;
    Ok(expected_excess_masked_with(&table, p))
}

pub fn expected_excess_masked_with(table: &BinomialTable, p: usize) -> ExcessResult {
    ExcessResult {
        method: Method::Masked,
        expected_excess: table.expected_padding(p),
        dataset_size: table.trials(),
        rate: table.rate(),
        physical_batch: Some(p),
        epsilon: None,
        steps: None,
        bound: None,
    }
}

/// `B₊ - E[b | b in the retained domain]` for truncated-Binomial sampling,
/// which always computes `B₊` gradients.
pub fn expected_excess_truncated(spec: &TruncationSpec) -> Result<ExcessResult> {
    let table = BinomialTable::new(spec.dataset_size, spec.rate())?;
    expected_excess_truncated_with(&table, spec)
}

pub fn expected_excess_truncated_with(table: &BinomialTable, spec: &TruncationSpec) -> Result<ExcessResult> {
    let upper = truncation_bound_with(table, spec)?;
    let lower = match spec.truncation {
        Truncation::Upper => 0,
        Truncation::TwoSided => lower_truncation_bound_with(table, spec).min(upper),
    };
    let mean = table.conditional_mean(lower, upper);
    Ok(ExcessResult {
        method: Method::Truncated,
        expected_excess: (upper as f64 - mean).max(0.0),
        dataset_size: spec.dataset_size,
        rate: spec.rate(),
        physical_batch: None,
        epsilon: Some(spec.epsilon),
        steps: Some(spec.steps),
        bound: Some(upper),
    })
}

/// `1 + (p - 1) / L`, an upper bound on `E[b₊] / E[b]` for masked padding.
pub fn excess_upper_bound(p: usize, expected_batch: f64) -> Result<f64> {
    if p == 0 {
        return Err(invalid!("physical batch size must be positive"));
    }
    if expected_batch.is_nan() || expected_batch <= 0.0 {
        return Err(invalid!("expected batch must be positive, got {expected_batch}"));
    }
    Ok(1.0 + (p - 1) as f64 / expected_batch)
}

/// Physical batch size in `1..=p_max` with the least expected excess.
///
/// Over the full range this is always `p = 1` (no padding); use
/// [`optimal_physical_batch_in`] to search a window such as `[900, 1024]`.
pub fn optimal_physical_batch(n: u64, q: f64, p_max: usize) -> Result<(usize, f64)> {
    optimal_physical_batch_in(n, q, 1..=p_max)
}

/// Argmin of the masked expected excess over `range`; ties go to the larger `p`.
pub fn optimal_physical_batch_in(n: u64, q: f64, range: RangeInclusive<usize>) -> Result<(usize, f64)> {
    let table = BinomialTable::new(n, q)?;
    optimal_physical_batch_with(&table, range)
}

pub fn optimal_physical_batch_with(table: &BinomialTable, range: RangeInclusive<usize>) -> Result<(usize, f64)> {
    if *range.start() == 0 || range.is_empty() {
        return Err(invalid!("physical batch range must be nonempty and start at 1 or above"));
    }
    let mut best = (0, f64::INFINITY);
    for p in range {
        let excess = table.expected_padding(p);
        if excess <= best.1 {
            best = (p, excess);
        }
    }
    Ok(best)
}
