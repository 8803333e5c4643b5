//! Poisson subsampling as a Binomial batch size followed by a
//! without-replacement draw, padded to whole physical batches.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::invalid;
use crate::{Result, RngStreams};

/// Dataset size `N`, expected logical batch size `L` and physical batch size `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    dataset_size: usize,
    expected_batch: f64,
    physical_batch: usize,
}

impl SamplerConfig {
    pub fn new(dataset_size: usize, expected_batch: f64, physical_batch: usize) -> Result<Self> {
        if dataset_size == 0 {
            return Err(invalid!("dataset size must be positive"));
        }
        if !(expected_batch > 0.0 && expected_batch <= dataset_size as f64) {
            return Err(invalid!("expected batch size must lie in (0, {dataset_size}], got {expected_batch}"));
        }
        if physical_batch == 0 || physical_batch > dataset_size {
            return Err(invalid!("physical batch size must lie in [1, {dataset_size}], got {physical_batch}"));
        }
        Ok(Self { dataset_size, expected_batch, physical_batch })
    }

    /// Builds the config from a subsampling rate `q = L / N` instead of `L`.
    pub fn from_rate(dataset_size: usize, rate: f64, physical_batch: usize) -> Result<Self> {
        Self::new(dataset_size, rate * dataset_size as f64, physical_batch)
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size
    }

    pub fn expected_batch(&self) -> f64 {
        self.expected_batch
    }

    pub fn physical_batch(&self) -> usize {
        self.physical_batch
    }

    /// Subsampling rate `q = L / N`.
    pub fn rate(&self) -> f64 {
        (self.expected_batch / self.dataset_size as f64).min(1.0)
    }
}

/// One step's sampled batch, padded up to `k` physical batches of `p` indices.
///
/// The first `true_size` entries of [`indices`](Self::indices) are the
/// Poisson-sampled examples; the remainder is padding with mask bit 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    true_size: usize,
    physical_batch: usize,
    indices: Vec<usize>,
    mask: Vec<bool>,
}

impl BatchPlan {
    pub fn true_size(&self) -> usize {
        self.true_size
    }

    pub fn padded_size(&self) -> usize {
        self.indices.len()
    }

    pub fn physical_batch(&self) -> usize {
        self.physical_batch
    }

    /// Number of physical batches `k`.
    pub fn num_physical_batches(&self) -> usize {
        self.indices.len() / self.physical_batch
    }

    /// All padded indices, concatenated in physical-batch order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Indices whose mask bit is 1.
    pub fn active_indices(&self) -> &[usize] {
        &self.indices[..self.true_size]
    }

    /// Physical batches of exactly `p` indices, paired with their mask bits.
    pub fn physical_batches(&self) -> impl Iterator<Item = (&[usize], &[bool])> {
        self.indices.chunks_exact(self.physical_batch).zip(self.mask.chunks_exact(self.physical_batch))
    }
}

/// Draws `b ~ Binomial(N, L/N)` from the batch-size stream.
pub fn draw_logical_batch_size(cfg: &SamplerConfig, streams: &mut RngStreams) -> usize {
    let q = cfg.rate();
    if q >= 1.0 {
        return cfg.dataset_size;
    }
    // SamplerConfig guarantees 0 < q < 1 here, which is all Binomial::new rejects.
    let dist = Binomial::new(cfg.dataset_size as u64, q).expect("rate validated by SamplerConfig");
    dist.sample(streams.batch_size_stream()) as usize
}

/// Smallest multiple of `p` that is at least `b`.
pub fn round_up_to_physical(b: usize, p: usize) -> usize {
    assert!(p >= 1, "physical batch size must be positive");
    b.div_ceil(p) * p
}

/// Uniform size-`m` subset of `0..n_total` in uniformly random order, drawn
/// from the without-replacement stream.
pub fn sample_wor(n_total: usize, m: usize, streams: &mut RngStreams) -> Result<Vec<usize>> {
    sample_wor_with(n_total, m, streams.wor_stream())
}

/// Partial Fisher-Yates over `0..n_total`.
///
/// The first `j` outputs depend only on the generator state, not on `m`, so
/// drawing `b₊` indices yields the same leading `b` indices as drawing `b`.
pub fn sample_wor_with<R: Rng + ?Sized>(n_total: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > n_total {
        return Err(invalid!("cannot draw {m} distinct indices from {n_total}"));
    }
    let mut pool: Vec<usize> = (0..n_total).collect();
    for i in 0..m {
        let j = rng.random_range(i..n_total);
        pool.swap(i, j);
    }
    pool.truncate(m);
    Ok(pool)
}

/// Samples one padded batch plan: `b`, then `b₊`, then `b₊` indices without
/// replacement, with the first `b` positions unmasked.
///
/// When `p` does not divide `N` and `b > p⌊N/p⌋`, `b₊` exceeds `N`. The plan
/// then holds a full permutation followed by `b₊ - N` repeats of its leading
/// entries; those positions are always masked out.
pub fn build_batch_plan(cfg: &SamplerConfig, streams: &mut RngStreams) -> BatchPlan {
    let b = draw_logical_batch_size(cfg, streams);
    let p = cfg.physical_batch;
    let n = cfg.dataset_size;
    let b_plus = round_up_to_physical(b, p);
    let mut indices = sample_wor(n, b_plus.min(n), streams).expect("min(b_plus, N) <= N");
    if b_plus > n {
        indices.extend_from_within(..b_plus - n);
    }
    let mut mask = Vec::with_capacity(b_plus);
    mask.resize(b, true);
    mask.resize(b_plus, false);
    BatchPlan { true_size: b, physical_batch: p, indices, mask }
}

/// Draws an exact Poisson batch with the same decomposition but without
/// padding: `b ~ Binomial(N, q)` then `b` indices without replacement.
///
/// With the same stream state this returns the active indices of the plan
/// [`build_batch_plan`] would have produced.
pub fn draw_poisson_batch(cfg: &SamplerConfig, streams: &mut RngStreams) -> Vec<usize> {
    let b = draw_logical_batch_size(cfg, streams);
    sample_wor(cfg.dataset_size, b, streams).expect("b <= N")
}

/// Reference Poisson subsampling: each index kept independently with
/// probability `q`.
pub fn poisson_subsample_reference<R: Rng + ?Sized>(n_total: usize, q: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid!("rate must lie in [0, 1], got {q}"));
    }
    Ok((0..n_total).filter(|_| rng.random_bool(q)).collect())
}

/// Shuffle-and-split baseline: a random permutation cut into batches of
/// `batch` (the last one may be short).
///
/// Batches formed this way do not satisfy Poisson subsampling, so privacy
/// accounting that assumes it does not apply.
pub fn shuffle_batches_reference<R: Rng + ?Sized>(
    n_total: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    let perm = sample_wor_with(n_total, n_total, rng)?;
    Ok(perm.chunks(batch).map(<[usize]>::to_vec).collect())
}
