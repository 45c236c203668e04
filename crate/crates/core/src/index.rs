//! Block lifecycle: allocate, commit, release and eviction.
//!
//! A shard's index space is split into contiguous partitions, one per client
//! process. Each partition is driven by exactly one [`LocalIndexManager`],
//! which owns the partition's free queue (a ring stored in the shard region)
//! and is the only writer of the partition's status records.

use std::collections::BTreeSet;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GearError, Result};
use crate::shard::Shard;
use crate::status::{HybridTimestamp, IndexState, StatusSnapshot};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalStrategy {
    /// Evict the oldest committed trajectory.
    #[default]
    Fifo,
    /// Evict the newest committed trajectory.
    Lifo,
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    pub node_id: u16,
    pub removal: RemovalStrategy,
    /// Committed indices kept in this partition before commit evicts.
    /// `None` means the partition size.
    pub max_selectable: Option<u64>,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            node_id: 0,
            removal: RemovalStrategy::Fifo,
            max_selectable: None,
        }
    }
}

// partition record words
const START: usize = 0;
const END: usize = 1;
const HEAD: usize = 2;
const LEN: usize = 3;
const COMMITS: usize = 4;
const EVICTIONS: usize = 5;
const RELEASES: usize = 6;

/// Lifetime counters of one partition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounters {
    pub commits: u64,
    pub evictions: u64,
    pub releases: u64,
}

impl PartitionCounters {
    /// `commits - evictions - releases`: what should currently be committed.
    pub fn expected_committed(&self) -> i64 {
        self.commits as i64 - self.evictions as i64 - self.releases as i64
    }
}

/// Counters of every partition of a shard, summed.
pub fn shard_counters(shard: &Shard) -> PartitionCounters {
    let mut total = PartitionCounters::default();
    for p in 0..shard.partitions() {
        let w = shard.partition_words(p);
        total.commits += w[COMMITS].load(Ordering::SeqCst);
        total.evictions += w[EVICTIONS].load(Ordering::SeqCst);
        total.releases += w[RELEASES].load(Ordering::SeqCst);
    }
    total
}

/// Free-queue contents of one partition, front first.
pub fn free_queue(shard: &Shard, partition: usize) -> Vec<u64> {
    let w = shard.partition_words(partition);
    let (start, end) = (w[START].load(Ordering::SeqCst), w[END].load(Ordering::SeqCst));
    let size = end - start;
    let head = w[HEAD].load(Ordering::SeqCst);
    let len = w[LEN].load(Ordering::SeqCst).min(size);
    (0..len)
        .map(|i| shard.slot(start + (head + i) % size).load(Ordering::SeqCst))
        .collect()
}

/// Handle to one in-flight row: a writable view of its blocks in every table.
pub struct WriteBuffer {
    shard: Arc<Shard>,
    partition: usize,
    local: u64,
    epoch: u64,
    committed: bool,
}

impl std::fmt::Debug for WriteBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WriteBuffer")
            .field("local", &self.local)
            .field("epoch", &self.epoch)
            .field("committed", &self.committed)
            .finish()
    }
}

impl WriteBuffer {
    pub fn local_index(&self) -> u64 {
        self.local
    }

    pub fn global_index(&self) -> u64 {
        self.shard.global_index(self.local)
    }

    /// Epoch of the WRITING record; the committed record carries the next one.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn is_committed(&self) -> bool {
        self.committed
    }

    pub fn column_mut(&mut self, name: &str) -> Result<&mut [u8]> {
        let id = self.shard.schema().column_id(name)?;
        self.column_mut_by_id(id)
    }

    pub fn column_mut_by_id(&mut self, column_id: usize) -> Result<&mut [u8]> {
        let ptr = self.shard.block_ptr(column_id, self.local)?;
        let len = self.shard.layout().tables[column_id].block_bytes;
        // The allocator hands each WRITING index to one buffer only.
        Ok(unsafe { std::slice::from_raw_parts_mut(ptr, len) })
    }

    /// One view per column, in schema order.
    pub fn views(&mut self) -> Vec<&mut [u8]> {
        let shard = &self.shard;
        shard
            .layout()
            .tables
            .iter()
            .enumerate()
            .map(|(id, t)| {
                let ptr = shard.block_ptr(id, self.local).expect("index in range");
                unsafe { std::slice::from_raw_parts_mut(ptr, t.block_bytes) }
            })
            .collect()
    }
}

pub struct LocalIndexManager {
    shard: Arc<Shard>,
    partition: usize,
    start: u64,
    end: u64,
    config: ManagerConfig,
    // (timestamp, local) of every COMMITTED index in the partition
    committed: BTreeSet<(HybridTimestamp, u64)>,
    committed_ts: Vec<Option<HybridTimestamp>>,
    reclaimed: usize,
}

impl std::fmt::Debug for LocalIndexManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalIndexManager")
            .field("shard", &self.shard.shard_id())
            .field("partition", &self.partition)
            .field("range", &(self.start..self.end))
            .field("committed", &self.committed.len())
            .finish()
    }
}

impl LocalIndexManager {
    /// Take ownership of `partition`.
    ///
    /// Any state left by a previous owner that died is repaired here: indices
    /// stuck in WRITING or EVICTED and records left mid-update go back to the
    /// free queue.
    pub fn attach(shard: Arc<Shard>, partition: usize, config: ManagerConfig) -> Result<Self> {
        if partition >= shard.partitions() {
            return Err(GearError::InvalidArgument(format!(
                "partition {partition} out of range ({} partitions)",
                shard.partitions()
            )));
        }
        let w = shard.partition_words(partition);
        let start = w[START].load(Ordering::SeqCst);
        let end = w[END].load(Ordering::SeqCst);
        let mut mgr = LocalIndexManager {
            shard,
            partition,
            start,
            end,
            config,
            committed: BTreeSet::new(),
            committed_ts: vec![None; (end - start) as usize],
            reclaimed: 0,
        };
        mgr.recover();
        Ok(mgr)
    }

    fn recover(&mut self) {
        let size = (self.end - self.start) as usize;
        let queued = free_queue(&self.shard, self.partition);
        let mut in_queue = vec![false; size];
        let mut queue = Vec::with_capacity(size);
        let mut dirty = false;
        for local in queued {
            let ok = (self.start..self.end).contains(&local)
                && !in_queue[(local - self.start) as usize]
                && self.shard.status_cell(local).read().map(|s| s.state) == Some(IndexState::Free);
            if ok {
                in_queue[(local - self.start) as usize] = true;
                queue.push(local);
            } else {
                dirty = true;
            }
        }
        for local in self.start..self.end {
            let cell = self.shard.status_cell(local);
            match cell.read() {
                Some(s) if s.state == IndexState::Committed => {
                    self.committed.insert((s.timestamp, local));
                    self.committed_ts[(local - self.start) as usize] = Some(s.timestamp);
                }
                Some(s) if s.state == IndexState::Free => {
                    if !in_queue[(local - self.start) as usize] {
                        queue.push(local);
                        dirty = true;
                    }
                }
                Some(_) => {
                    cell.write(IndexState::Free, 0.0, HybridTimestamp::ZERO);
                    queue.push(local);
                    self.reclaimed += 1;
                    dirty = true;
                }
                None => {
                    cell.repair(IndexState::Free, 0.0, HybridTimestamp::ZERO);
                    queue.push(local);
                    self.reclaimed += 1;
                    dirty = true;
                }
            }
        }
        if dirty {
            for (i, &local) in queue.iter().enumerate() {
                self.shard.slot(self.start + i as u64).store(local, Ordering::SeqCst);
            }
            let w = self.words();
            w[HEAD].store(0, Ordering::SeqCst);
            w[LEN].store(queue.len() as u64, Ordering::SeqCst);
        }
    }

    fn words(&self) -> &[std::sync::atomic::AtomicU64; 8] {
        self.shard.partition_words(self.partition)
    }

    fn size(&self) -> u64 {
        self.end - self.start
    }

    fn pop_free(&mut self) -> Option<u64> {
        let w = self.words();
        let len = w[LEN].load(Ordering::SeqCst);
        if len == 0 {
            return None;
        }
        let head = w[HEAD].load(Ordering::SeqCst);
        let local = self.shard.slot(self.start + head).load(Ordering::SeqCst);
        w[HEAD].store((head + 1) % self.size(), Ordering::SeqCst);
        w[LEN].store(len - 1, Ordering::SeqCst);
        Some(local)
    }

    fn push_free(&mut self, local: u64) {
        let w = self.words();
        let len = w[LEN].load(Ordering::SeqCst);
        debug_assert!(len < self.size());
        let head = w[HEAD].load(Ordering::SeqCst);
        let pos = (head + len) % self.size();
        self.shard.slot(self.start + pos).store(local, Ordering::SeqCst);
        w[LEN].store(len + 1, Ordering::SeqCst);
    }

    fn bump(&self, counter: usize) {
        self.words()[counter].fetch_add(1, Ordering::SeqCst);
    }

    fn check_owned(&self, local: u64) -> Result<()> {
        if !(self.start..self.end).contains(&local) {
            return Err(GearError::IndexOutOfRange {
                index: local,
                capacity: self.end,
            });
        }
        Ok(())
    }

    fn state_of(&self, local: u64) -> Result<IndexState> {
        Ok(self.shard.status(local)?.state)
    }

    fn forget_committed(&mut self, local: u64) {
        if let Some(ts) = self.committed_ts[(local - self.start) as usize].take() {
            self.committed.remove(&(ts, local));
        }
    }

    fn mark_evicted(&mut self, local: u64) {
        self.shard
            .status_cell(local)
            .write(IndexState::Evicted, 0.0, HybridTimestamp::ZERO);
        self.forget_committed(local);
        self.bump(EVICTIONS);
    }

    fn begin_write(&mut self, local: u64) -> WriteBuffer {
        let cell = self.shard.status_cell(local);
        cell.write(IndexState::Writing, 0.0, HybridTimestamp::ZERO);
        WriteBuffer {
            shard: Arc::clone(&self.shard),
            partition: self.partition,
            local,
            epoch: cell.raw_epoch(),
            committed: false,
        }
    }

    pub fn shard(&self) -> &Arc<Shard> {
        &self.shard
    }

    pub fn partition(&self) -> usize {
        self.partition
    }

    pub fn range(&self) -> std::ops::Range<u64> {
        self.start..self.end
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    /// Indices repaired when this manager attached.
    pub fn reclaimed(&self) -> usize {
        self.reclaimed
    }

    pub fn committed_len(&self) -> usize {
        self.committed.len()
    }

    pub fn free_len(&self) -> u64 {
        self.words()[LEN].load(Ordering::SeqCst)
    }

    pub fn counters(&self) -> PartitionCounters {
        let w = self.words();
        PartitionCounters {
            commits: w[COMMITS].load(Ordering::SeqCst),
            evictions: w[EVICTIONS].load(Ordering::SeqCst),
            releases: w[RELEASES].load(Ordering::SeqCst),
        }
    }

    pub fn next_timestamp(&self) -> HybridTimestamp {
        self.shard.next_timestamp(self.config.node_id)
    }

    /// Dequeue a free index, evicting a victim first if the queue is empty.
    pub fn allocate(&mut self) -> Result<WriteBuffer> {
        let local = match self.pop_free() {
            Some(local) => local,
            None => {
                let victim = self.select_victim().map_err(|_| GearError::AllocationExhausted {
                    partition: self.partition,
                })?;
                self.mark_evicted(victim);
                victim
            }
        };
        Ok(self.begin_write(local))
    }

    /// Publish a written row with the given priority and timestamp.
    pub fn commit(
        &mut self,
        buffer: &mut WriteBuffer,
        priority: f64,
        ts: HybridTimestamp,
    ) -> Result<u64> {
        if buffer.committed {
            return Err(GearError::AlreadyCommitted(buffer.local));
        }
        if !priority.is_finite() || priority < 0.0 {
            return Err(GearError::InvalidPriority(priority));
        }
        if !Arc::ptr_eq(&buffer.shard, &self.shard) || buffer.partition != self.partition {
            return Err(GearError::InvalidArgument(
                "write buffer belongs to another manager".into(),
            ));
        }
        let local = buffer.local;
        let state = self.state_of(local)?;
        if state != IndexState::Writing {
            return Err(GearError::InvalidState {
                index: local,
                state,
                expected: "WRITING",
            });
        }
        self.shard
            .status_cell(local)
            .write(IndexState::Committed, priority, ts);
        self.bump(COMMITS);
        self.committed.insert((ts, local));
        self.committed_ts[(local - self.start) as usize] = Some(ts);
        buffer.committed = true;

        let limit = self.config.max_selectable.unwrap_or(self.size());
        while self.committed.len() as u64 > limit.max(1) {
            let victim = self.victim_excluding(Some(local)).ok_or(GearError::NoVictim)?;
            self.mark_evicted(victim);
            self.release(victim)?;
        }
        Ok(local)
    }

    /// Commit with the next timestamp of the node clock.
    pub fn commit_now(&mut self, buffer: &mut WriteBuffer, priority: f64) -> Result<u64> {
        let ts = self.next_timestamp();
        self.commit(buffer, priority, ts)
    }

    /// Give up an uncommitted buffer; its index returns to the free queue.
    pub fn abort(&mut self, buffer: WriteBuffer) -> Result<()> {
        if buffer.committed {
            return Err(GearError::AlreadyCommitted(buffer.local));
        }
        let state = self.state_of(buffer.local)?;
        if state != IndexState::Writing {
            return Err(GearError::InvalidState {
                index: buffer.local,
                state,
                expected: "WRITING",
            });
        }
        self.shard
            .status_cell(buffer.local)
            .write(IndexState::Free, 0.0, HybridTimestamp::ZERO);
        self.push_free(buffer.local);
        Ok(())
    }

    /// Mark a committed index as evicted without freeing it yet.
    pub fn evict(&mut self, local: u64) -> Result<()> {
        self.check_owned(local)?;
        let state = self.state_of(local)?;
        if state != IndexState::Committed {
            return Err(GearError::InvalidState {
                index: local,
                state,
                expected: "COMMITTED",
            });
        }
        self.mark_evicted(local);
        Ok(())
    }

    /// Return a COMMITTED or EVICTED index to the free queue.
    pub fn release(&mut self, local: u64) -> Result<()> {
        self.check_owned(local)?;
        match self.state_of(local)? {
            IndexState::Committed => {
                self.forget_committed(local);
                self.bump(RELEASES);
            }
            IndexState::Evicted => {}
            state => {
                return Err(GearError::InvalidState {
                    index: local,
                    state,
                    expected: "COMMITTED or EVICTED",
                })
            }
        }
        self.shard
            .status_cell(local)
            .write(IndexState::Free, 0.0, HybridTimestamp::ZERO);
        self.push_free(local);
        Ok(())
    }

    fn victim_excluding(&self, exclude: Option<u64>) -> Option<u64> {
        let keep = |&&(_, local): &&(HybridTimestamp, u64)| Some(local) != exclude;
        let found = match self.config.removal {
            RemovalStrategy::Fifo => self.committed.iter().find(keep),
            RemovalStrategy::Lifo => self.committed.iter().rev().find(keep),
        };
        found.map(|&(_, local)| local)
    }

    /// Oldest (FIFO) or newest (LIFO) committed index of the partition.
    pub fn select_victim(&self) -> Result<u64> {
        self.victim_excluding(None).ok_or(GearError::NoVictim)
    }

    /// Selectable entries of the whole shard.
    pub fn sync(&self) -> StatusSnapshot {
        self.shard.snapshot()
    }
}
