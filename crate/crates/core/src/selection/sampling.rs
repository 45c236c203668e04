//! Weighted and uniform sampling over a flat index set.
//!
//! Weighted sampling builds an inclusive prefix array once and then locates
//! each draw `r = u_j * total` with a binary search for the first bin whose
//! prefix exceeds `r`. Zero-weight bins have the same prefix as their left
//! neighbour and can never be the first bin above `r`.
//!
//! The `k` draws are split into `s` contiguous chunks, one per worker. Draw
//! `j` always uses variate `j` of the counter RNG, so the output does not
//! depend on `s`.

use rayon::prelude::*;

use super::prefix::prefix_sum;
use super::rng::CounterRng;
use crate::error::{GearError, Result};

/// Parallel arrays of global indices and their weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedIndexSet {
    pub global_indices: Vec<u64>,
    pub weights: Vec<f64>,
}

impl WeightedIndexSet {
    pub fn new(global_indices: Vec<u64>, weights: Vec<f64>) -> Result<Self> {
        if global_indices.len() != weights.len() {
            return Err(GearError::Selection(format!(
                "{} indices but {} weights",
                global_indices.len(),
                weights.len()
            )));
        }
        Ok(WeightedIndexSet {
            global_indices,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.global_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_indices.is_empty()
    }
}

/// Comparison counts of the search phase, one entry per worker.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub per_worker: Vec<u64>,
}

impl SearchStats {
    pub fn total(&self) -> u64 {
        self.per_worker.iter().sum()
    }

    pub fn max_per_worker(&self) -> u64 {
        self.per_worker.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub global_indices: Vec<u64>,
    pub stats: SearchStats,
}

/// Prefix array ready for repeated searches.
pub(crate) struct BinSearch {
    prefix: Vec<f64>,
    // bins past the last positive weight are never searched
    last_positive: usize,
}

impl BinSearch {
    pub(crate) fn new(weights: &[f64]) -> Result<BinSearch> {
        let prefix = prefix_sum(weights)?;
        let last_positive = weights
            .iter()
            .rposition(|&w| w > 0.0)
            .ok_or_else(|| GearError::Selection("total weight is zero".into()))?;
        Ok(BinSearch {
            prefix,
            last_positive,
        })
    }

    pub(crate) fn total(&self) -> f64 {
        self.prefix[self.last_positive]
    }

    /// First bin with `prefix > r`, or the last positive bin if rounding put
    /// `r` at the total. Searches `last_positive + 1` candidates, so it makes
    /// at most `ceil(log2(N))` comparisons.
    #[inline]
    pub(crate) fn find(&self, r: f64, comparisons: &mut u64) -> usize {
        let (mut lo, mut hi) = (0usize, self.last_positive);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            *comparisons += 1;
            if self.prefix[mid] > r {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }
}

fn chunk_len(k: usize, workers: usize) -> usize {
    k.div_ceil(workers.max(1)).max(1)
}

/// `k` draws with replacement, `P(i) = w_i / sum(w)` per draw.
pub fn weighted_sample(
    set: &WeightedIndexSet,
    k: usize,
    seed: u64,
    parallelism: usize,
) -> Result<Sampled> {
    if k == 0 {
        return Err(GearError::Selection("k must be at least 1".into()));
    }
    if set.is_empty() {
        return Err(GearError::Selection("empty selectable set".into()));
    }
    let bins = BinSearch::new(&set.weights)?;
    let rng = CounterRng::new(seed);
    let total = bins.total();
    let mut out = vec![0u64; k];
    let chunk = chunk_len(k, parallelism);
    let per_worker: Vec<u64> = out
        .par_chunks_mut(chunk)
        .enumerate()
        .map(|(w, slots)| {
            let mut comparisons = 0;
            for (i, slot) in slots.iter_mut().enumerate() {
                let j = (w * chunk + i) as u64;
                let bin = bins.find(rng.f64_at(j) * total, &mut comparisons);
                *slot = set.global_indices[bin];
            }
            comparisons
        })
        .collect();
    Ok(Sampled {
        global_indices: out,
        stats: SearchStats { per_worker },
    })
}

/// `k` distinct indices by sequential rejection of repeated draws.
pub fn weighted_sample_distinct(set: &WeightedIndexSet, k: usize, seed: u64) -> Result<Sampled> {
    if k == 0 {
        return Err(GearError::Selection("k must be at least 1".into()));
    }
    let positive = set.weights.iter().filter(|&&w| w > 0.0).count();
    if k > positive {
        return Err(GearError::Selection(format!(
            "cannot draw {k} distinct indices from {positive} selectable"
        )));
    }
    let bins = BinSearch::new(&set.weights)?;
    let rng = CounterRng::new(seed);
    let total = bins.total();
    let mut taken = vec![false; set.len()];
    let mut out = Vec::with_capacity(k);
    let mut comparisons = 0;
    let mut j = 0u64;
    while out.len() < k {
        let bin = bins.find(rng.f64_at(j) * total, &mut comparisons);
        j += 1;
        if !taken[bin] {
            taken[bin] = true;
            out.push(set.global_indices[bin]);
        }
    }
    Ok(Sampled {
        global_indices: out,
        stats: SearchStats {
            per_worker: vec![comparisons],
        },
    })
}

/// `k` draws with replacement, every index equally likely.
pub fn uniform_sample(indices: &[u64], k: usize, seed: u64) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(GearError::Selection("k must be at least 1".into()));
    }
    if indices.is_empty() {
        return Err(GearError::Selection("empty selectable set".into()));
    }
    let rng = CounterRng::new(seed);
    let n = indices.len();
    Ok((0..k as u64)
        .map(|j| {
            let bin = ((rng.f64_at(j) * n as f64) as usize).min(n - 1);
            indices[bin]
        })
        .collect())
}

/// `k` distinct indices, uniformly, by sequential rejection.
pub fn uniform_sample_distinct(indices: &[u64], k: usize, seed: u64) -> Result<Vec<u64>> {
    let set = WeightedIndexSet::new(indices.to_vec(), vec![1.0; indices.len()])?;
    Ok(weighted_sample_distinct(&set, k, seed)?.global_indices)
}
