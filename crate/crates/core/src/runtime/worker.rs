//! Client workloads run inside worker processes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::collection::{gather_local_with_epochs, CopyCounter};
use crate::error::{GearError, Result};
use crate::index::{LocalIndexManager, ManagerConfig, WriteBuffer};
use crate::selection::rng::CounterRng;
use crate::shard::Shard;

use super::pattern::{block_matches, fill_block};

/// Outcome of [`mixed_workload`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedReport {
    pub partition: usize,
    pub ops: u64,
    pub writes: u64,
    pub releases: u64,
    pub collects: u64,
    /// Rows read and checked against their expected pattern.
    pub verified_rows: u64,
    /// Rows that changed while being read (reported stale, not a failure).
    pub stale_rows: u64,
    /// Rows whose bytes did not match what was committed.
    pub failures: u64,
}

/// Interleave writes, releases and verified reads on one partition.
///
/// Roughly half of the operations write a row whose bytes are a function of
/// `(global index, committed epoch)`; a tenth release one of the partition's
/// committed rows; the rest read up to 8 random selectable rows from anywhere
/// in the shard (other processes' partitions included) and check every byte.
pub fn mixed_workload(shard: Arc<Shard>, partition: usize, ops: u64, seed: u64) -> Result<MixedReport> {
    let mut manager = LocalIndexManager::attach(Arc::clone(&shard), partition, ManagerConfig::default())?;
    let rng = CounterRng::new(seed);
    let mut draw = 0u64;
    let mut next = || {
        draw += 1;
        rng.u64_at(draw)
    };
    let names: Vec<String> = shard.schema().columns().iter().map(|c| c.name.clone()).collect();
    let copies = CopyCounter::default();
    let mut own: Vec<u64> = Vec::new();
    let mut report = MixedReport {
        partition,
        ops,
        ..MixedReport::default()
    };
    for _ in 0..ops {
        let roll = next() % 100;
        if roll < 50 {
            let mut buf = manager.allocate()?;
            write_pattern(&mut buf);
            let priority = 1.0 + (next() % 1000) as f64;
            let local = manager.commit_now(&mut buf, priority)?;
            own.push(local);
            report.writes += 1;
        } else if roll < 60 {
            // drop indices lost to eviction since they were written
            own.retain(|&l| shard.status(l).map(|s| s.is_selectable()).unwrap_or(false));
            if !own.is_empty() {
                let local = own.swap_remove((next() % own.len() as u64) as usize);
                manager.release(local)?;
                report.releases += 1;
            }
        } else {
            let snapshot = shard.snapshot();
            if snapshot.is_empty() {
                continue;
            }
            let n = 1 + (next() % 8) as usize;
            let locals: Vec<u64> = (0..n)
                .map(|_| snapshot.entries[(next() % snapshot.len() as u64) as usize].local_index)
                .collect();
            report.collects += 1;
            match gather_local_with_epochs(&shard, &locals, &names, &copies) {
                Ok((columns, epochs)) => {
                    for (r, (&local, &epoch)) in locals.iter().zip(&epochs).enumerate() {
                        let global = shard.global_index(local);
                        let ok = columns
                            .iter()
                            .enumerate()
                            .all(|(c, col)| block_matches(col.row(r), global, epoch, c));
                        report.verified_rows += 1;
                        if !ok {
                            report.failures += 1;
                        }
                    }
                }
                Err(GearError::StaleIndices(v)) => report.stale_rows += v.len() as u64,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}

fn write_pattern(buf: &mut WriteBuffer) {
    let global = buf.global_index();
    let epoch = buf.epoch() + 2;
    for (c, view) in buf.views().into_iter().enumerate() {
        fill_block(view, global, epoch, c);
    }
}

/// Allocate `count` rows, fill half of each, and return the buffers uncommitted.
///
/// Used to leave WRITING indices behind in a process that is then killed.
pub fn hold_writes(shard: Arc<Shard>, partition: usize, count: usize) -> Result<(LocalIndexManager, Vec<WriteBuffer>)> {
    let mut manager = LocalIndexManager::attach(shard, partition, ManagerConfig::default())?;
    let mut held = Vec::with_capacity(count);
    for _ in 0..count {
        let mut buf = manager.allocate()?;
        for view in buf.views() {
            let half = view.len() / 2;
            view[..half].fill(0xee);
        }
        held.push(buf);
    }
    Ok((manager, held))
}
