//! Prioritized sampling over a prefix sum, with the binary-search step count.

use gear::selection::{prefix_sum, weighted_sample, WeightedIndexSet};

fn main() -> gear::Result<()> {
    let weights = vec![1.0, 2.0, 3.0, 4.0];
    println!("prefix sum {:?}", prefix_sum(&weights)?);

    let set = WeightedIndexSet::new(vec![100, 101, 102, 103], weights)?;
    let k = 100_000;
    let sampled = weighted_sample(&set, k, 7, 4)?;
    let mut counts = [0usize; 4];
    for g in &sampled.global_indices {
        counts[(g - 100) as usize] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        println!("index {}: {:.4}", 100 + i, *c as f64 / k as f64);
    }
    println!(
        "{} comparisons in total, at most {} per worker",
        sampled.stats.total(),
        sampled.stats.max_per_worker()
    );
    Ok(())
}
