//! Oracles shared by the integration and acceptance tests. Nothing here calls
//! into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

use gear::index::{free_queue, LocalIndexManager, ManagerConfig, RemovalStrategy, WriteBuffer};
use gear::selection::Candidate;
use gear::{Backing, HybridTimestamp, IndexState, Shard, ShardOptions, TrajectorySchema};

/// xorshift64*; independent of the library's generators.
#[derive(Debug, Clone)]
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn range(&mut self, lo: u64, hi_inclusive: u64) -> u64 {
        lo + self.below(hi_inclusive - lo + 1)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

// ---------------------------------------------------------------------------
// Selection oracles

/// TopK by sorting everything: priority descending, then lower global index.
pub fn oracle_topk(all: &[Candidate], k: usize) -> Vec<u64> {
    let mut v: Vec<&Candidate> = all.iter().filter(|c| c.weight > 0.0).collect();
    v.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap()
            .then(a.global_index.cmp(&b.global_index))
    });
    v.iter().take(k).map(|c| c.global_index).collect()
}

/// FIFO by sorting everything: oldest timestamp first, then lower global index.
pub fn oracle_fifo(all: &[Candidate], k: usize) -> Vec<u64> {
    let mut v: Vec<&Candidate> = all.iter().filter(|c| c.weight > 0.0).collect();
    v.sort_by(|a, b| {
        (a.timestamp.logical_seq, a.timestamp.node_id, a.global_index).cmp(&(
            b.timestamp.logical_seq,
            b.timestamp.node_id,
            b.global_index,
        ))
    });
    v.iter().take(k).map(|c| c.global_index).collect()
}

/// Chi-square statistic of `counts` against expected probabilities.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper 1% point of the chi-square distribution with 3 degrees of freedom.
pub const CHI2_99_DF3: f64 = 11.344_866_730_144_373;

// ---------------------------------------------------------------------------
// Index-manager reference simulator

/// Brute-force model of one partition: a FIFO free queue seeded in ascending
/// order, a status per index and eviction by scanning all committed entries.
#[derive(Debug, Clone)]
pub struct RefPartition {
    pub start: u64,
    pub end: u64,
    pub lifo: bool,
    pub max_selectable: u64,
    pub queue: VecDeque<u64>,
    pub status: BTreeMap<u64, (IndexState, f64, HybridTimestamp)>,
    pub commits: u64,
    pub evictions: u64,
    pub releases: u64,
}

impl RefPartition {
    pub fn new(start: u64, end: u64, lifo: bool, max_selectable: Option<u64>) -> Self {
        RefPartition {
            start,
            end,
            lifo,
            max_selectable: max_selectable.unwrap_or(end - start).max(1),
            queue: (start..end).collect(),
            status: (start..end)
                .map(|i| (i, (IndexState::Free, 0.0, HybridTimestamp::ZERO)))
                .collect(),
            commits: 0,
            evictions: 0,
            releases: 0,
        }
    }

    fn state(&self, i: u64) -> IndexState {
        self.status[&i].0
    }

    fn victim(&self, exclude: Option<u64>) -> Option<u64> {
        let committed = self
            .status
            .iter()
            .filter(|(&i, s)| s.0 == IndexState::Committed && Some(i) != exclude)
            .map(|(&i, s)| (s.2, i));
        if self.lifo {
            committed.max().map(|(_, i)| i)
        } else {
            committed.min().map(|(_, i)| i)
        }
    }

    pub fn committed_count(&self) -> u64 {
        self.status.values().filter(|s| s.0 == IndexState::Committed).count() as u64
    }

    pub fn allocate(&mut self) -> Option<u64> {
        let i = match self.queue.pop_front() {
            Some(i) => i,
            None => {
                let v = self.victim(None)?;
                self.evictions += 1;
                v
            }
        };
        self.status.insert(i, (IndexState::Writing, 0.0, HybridTimestamp::ZERO));
        Some(i)
    }

    pub fn commit(&mut self, i: u64, priority: f64, ts: HybridTimestamp) -> bool {
        if self.state(i) != IndexState::Writing || priority < 0.0 {
            return false;
        }
        self.status.insert(i, (IndexState::Committed, priority, ts));
        self.commits += 1;
        while self.committed_count() > self.max_selectable {
            let v = self.victim(Some(i)).expect("over the watermark there is another victim");
            self.evictions += 1;
            self.status.insert(v, (IndexState::Free, 0.0, HybridTimestamp::ZERO));
            self.queue.push_back(v);
        }
        true
    }

    pub fn abort(&mut self, i: u64) -> bool {
        if self.state(i) != IndexState::Writing {
            return false;
        }
        self.status.insert(i, (IndexState::Free, 0.0, HybridTimestamp::ZERO));
        self.queue.push_back(i);
        true
    }

    pub fn evict(&mut self, i: u64) -> bool {
        if self.state(i) != IndexState::Committed {
            return false;
        }
        self.evictions += 1;
        self.status.insert(i, (IndexState::Evicted, 0.0, HybridTimestamp::ZERO));
        true
    }

    pub fn release(&mut self, i: u64) -> bool {
        match self.state(i) {
            IndexState::Committed => self.releases += 1,
            IndexState::Evicted => {}
            _ => return false,
        }
        self.status.insert(i, (IndexState::Free, 0.0, HybridTimestamp::ZERO));
        self.queue.push_back(i);
        true
    }

    pub fn select_victim(&self) -> Option<u64> {
        self.victim(None)
    }
}

/// Compare the shard's status table and free queue with the model; `Err`
/// describes the first difference.
pub fn compare(shard: &Shard, partition: usize, sim: &RefPartition, mgr: &LocalIndexManager) -> Result<(), String> {
    for (&i, &(state, priority, ts)) in &sim.status {
        let s = shard.status(i).map_err(|e| e.to_string())?;
        let committed_ts = if state == IndexState::Committed { ts } else { s.timestamp };
        if s.state != state || s.priority != priority || s.timestamp != committed_ts {
            return Err(format!(
                "index {i}: shard has {:?}/{}/{}, model {:?}/{}/{}",
                s.state, s.priority, s.timestamp, state, priority, ts
            ));
        }
    }
    let queue = free_queue(shard, partition);
    if queue != sim.queue.iter().copied().collect::<Vec<_>>() {
        return Err(format!("free queue {queue:?}, model {:?}", sim.queue));
    }
    let c = mgr.counters();
    if (c.commits, c.evictions, c.releases) != (sim.commits, sim.evictions, sim.releases) {
        return Err(format!(
            "counters {:?}, model ({}, {}, {})",
            c, sim.commits, sim.evictions, sim.releases
        ));
    }
    // partition invariant: every index in exactly one place
    let mut seen = HashSet::new();
    for &i in &queue {
        if !seen.insert(i) {
            return Err(format!("index {i} twice in the free queue"));
        }
    }
    for i in sim.start..sim.end {
        let s = shard.status(i).unwrap().state;
        let in_queue = seen.contains(&i);
        if in_queue != (s == IndexState::Free) {
            return Err(format!("index {i} is {s:?} but in_queue={in_queue}"));
        }
    }
    if c.expected_committed() != sim.committed_count() as i64 {
        return Err("conservation invariant broken".into());
    }
    Ok(())
}

/// One randomized allocate/commit/release/evict/abort sequence on a fresh
/// shard, checked against the model after every step. Returns the number of
/// steps checked.
pub fn run_state_machine_sequence(seed: u64) -> Result<usize, String> {
    let mut rng = TestRng::new(seed);
    let capacity = rng.range(1, 16);
    let partitions = rng.range(1, capacity.min(3)) as usize;
    let lifo = rng.chance(0.5);
    let watermark = rng.chance(0.3).then(|| rng.range(1, capacity));
    let shard = Arc::new(
        Shard::create(
            &TrajectorySchema::synthetic(8).unwrap(),
            capacity,
            0,
            &Backing::Private,
            &ShardOptions {
                partitions,
                ..ShardOptions::default()
            },
        )
        .map_err(|e| e.to_string())?,
    );
    let config = ManagerConfig {
        node_id: 0,
        removal: if lifo { RemovalStrategy::Lifo } else { RemovalStrategy::Fifo },
        max_selectable: watermark,
    };
    let mut mgrs = Vec::new();
    let mut sims = Vec::new();
    for p in 0..partitions {
        // equal contiguous ranges, computed independently
        let start = p as u64 * capacity / partitions as u64;
        let end = (p as u64 + 1) * capacity / partitions as u64;
        mgrs.push(LocalIndexManager::attach(Arc::clone(&shard), p, config.clone()).map_err(|e| e.to_string())?);
        sims.push(RefPartition::new(start, end, lifo, watermark));
    }
    let mut buffers: Vec<Vec<WriteBuffer>> = (0..partitions).map(|_| Vec::new()).collect();
    let mut used_ts = HashSet::new();
    let mut last_epoch: BTreeMap<u64, u64> = BTreeMap::new();
    let steps = rng.range(1, 60) as usize;
    for step in 0..steps {
        let p = rng.below(partitions as u64) as usize;
        let (mgr, sim, held) = (&mut mgrs[p], &mut sims[p], &mut buffers[p]);
        let op = rng.below(100);
        let ctx = |what: &str| format!("seed {seed} step {step} partition {p}: {what}");
        if op < 35 {
            let expected = sim.allocate();
            match (mgr.allocate(), expected) {
                (Ok(buf), Some(i)) => {
                    if buf.local_index() != i {
                        return Err(ctx(&format!("allocate gave {}, model {i}", buf.local_index())));
                    }
                    let epoch = shard.status(i).unwrap().epoch;
                    if let Some(&prev) = last_epoch.get(&i) {
                        if epoch <= prev {
                            return Err(ctx(&format!("epoch of {i} went from {prev} to {epoch}")));
                        }
                    }
                    last_epoch.insert(i, epoch);
                    // a buffer whose index was stolen by eviction is gone
                    held.retain(|b| b.local_index() != i);
                    held.push(buf);
                }
                (Err(_), None) => {}
                (got, want) => return Err(ctx(&format!("allocate {got:?} vs model {want:?}"))),
            }
        } else if op < 65 {
            if held.is_empty() {
                continue;
            }
            let mut buf = held.swap_remove(rng.below(held.len() as u64) as usize);
            let priority = if rng.chance(0.1) { 0.0 } else { rng.unit() * 10.0 };
            let ts = loop {
                let seq = rng.range(1, 1 << 40);
                if used_ts.insert(seq) {
                    break HybridTimestamp::new(seq, 0);
                }
            };
            let i = buf.local_index();
            let want = sim.commit(i, priority, ts);
            let got = mgr.commit(&mut buf, priority, ts);
            if got.is_ok() != want {
                return Err(ctx(&format!("commit {i}: {got:?} vs model {want}")));
            }
            if rng.chance(0.05) && mgr.commit(&mut buf, priority, ts).is_ok() {
                return Err(ctx("double commit accepted"));
            }
        } else if op < 70 {
            if held.is_empty() {
                continue;
            }
            let buf = held.swap_remove(rng.below(held.len() as u64) as usize);
            let i = buf.local_index();
            let want = sim.abort(i);
            let got = mgr.abort(buf);
            if got.is_ok() != want {
                return Err(ctx(&format!("abort {i}: {got:?} vs model {want}")));
            }
        } else if op < 80 {
            let i = rng.range(sim.start, sim.end - 1);
            let want = sim.evict(i);
            let got = mgr.evict(i);
            if got.is_ok() != want {
                return Err(ctx(&format!("evict {i}: {got:?} vs model {want}")));
            }
        } else if op < 97 {
            let i = rng.range(sim.start, sim.end - 1);
            let want = sim.release(i);
            let got = mgr.release(i);
            if got.is_ok() != want {
                return Err(ctx(&format!("release {i}: {got:?} vs model {want}")));
            }
        } else {
            let want = sim.select_victim();
            let got = mgr.select_victim().ok();
            if got != want {
                return Err(ctx(&format!("victim {got:?} vs model {want:?}")));
            }
        }
        for q in 0..partitions {
            compare(&shard, q, &sims[q], &mgrs[q]).map_err(|e| ctx(&e))?;
        }
        let counts = shard.state_counts();
        if counts.iter().sum::<usize>() as u64 != capacity {
            return Err(ctx("state counts do not add up to capacity"));
        }
    }
    Ok(steps)
}
