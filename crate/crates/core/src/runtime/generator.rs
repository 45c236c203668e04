use std::time::{Duration, Instant};

use crate::error::{GearError, Result};
use crate::placement::place_online;
use crate::selection::rng::CounterRng;

use super::cluster::{write_synthetic, ClusterHandle};
use super::config::PriorityDist;

/// Generate synthetic trajectories on every client of every node for
/// `duration`, at `rate` trajectories per second in total.
///
/// Each client writes to its own node's shard (online placement) on a fixed
/// schedule; a full partition evicts rather than blocks. Returns the number of
/// trajectories committed.
pub fn run_online_generator(
    handle: &mut ClusterHandle,
    rate: f64,
    duration: Duration,
    priority: PriorityDist,
    seed: u64,
) -> Result<u64> {
    if !rate.is_finite() || rate <= 0.0 {
        return Err(GearError::InvalidArgument(format!("rate must be positive, got {rate}")));
    }
    let clients = handle.total_clients();
    let interval = Duration::from_nanos((clients as f64 * 1e9 / rate).round() as u64);
    let topology = &handle.topology;
    for node in &handle.nodes {
        debug_assert_eq!(place_online(node.node_id, topology)?, node.shard.shard_id());
    }
    let start = Instant::now();
    let counts: Vec<Result<u64>> = std::thread::scope(|s| {
        let mut workers = Vec::with_capacity(clients);
        for node in &mut handle.nodes {
            for manager in &mut node.managers {
                let client = (node.node_id * 1000 + manager.partition()) as u64;
                workers.push(s.spawn(move || -> Result<u64> {
                    let rng = CounterRng::new(seed ^ client.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                    let mut written = 0u64;
                    loop {
                        let due = start + interval.mul_f64(written as f64);
                        if due.duration_since(start) >= duration {
                            return Ok(written);
                        }
                        if let Some(wait) = due.checked_duration_since(Instant::now()) {
                            std::thread::sleep(wait);
                        }
                        write_synthetic(manager, priority.at(rng.f64_at(written)))?;
                        written += 1;
                    }
                }));
            }
        }
        workers
            .into_iter()
            .map(|w| w.join().expect("generator thread panicked"))
            .collect()
    });
    counts.into_iter().sum()
}
