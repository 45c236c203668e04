//! Inclusive prefix sums over selection weights.
//!
//! The scan runs in three phases over fixed-size blocks: an independent
//! local scan per block, a sequential scan over block totals, and a final
//! offset pass. The block size never depends on the thread count, so the
//! floating-point association (and with it every output bit) is the same for
//! any degree of parallelism.

use rayon::prelude::*;

use crate::error::{GearError, Result};

pub const SCAN_BLOCK: usize = 4096;

fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
    {
        return Err(GearError::Selection(format!(
            "weight {w} at position {i} is negative or not finite"
        )));
    }
    Ok(())
}

/// `out[i] = w[0] + ... + w[i]`, with block-fixed association.
pub fn prefix_sum(weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let mut out = weights.to_vec();
    if out.is_empty() {
        return Ok(out);
    }
    let totals: Vec<f64> = out
        .par_chunks_mut(SCAN_BLOCK)
        .map(|block| {
            let mut acc = 0.0;
            for x in block.iter_mut() {
                acc += *x;
                *x = acc;
            }
            acc
        })
        .collect();
    let mut offsets = Vec::with_capacity(totals.len());
    let mut running = 0.0;
    for t in &totals {
        offsets.push(running);
        running += t;
    }
    out.par_chunks_mut(SCAN_BLOCK)
        .zip(offsets.par_iter())
        .skip(1)
        .for_each(|(block, &offset)| {
            for x in block.iter_mut() {
                *x += offset;
            }
        });
    Ok(out)
}
