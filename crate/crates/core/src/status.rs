//! Per-index status records.
//!
//! Each record is 32 bytes in the shard region, little-endian:
//! `state u8, pad u8, node_id u16, pad u32, priority f64, logical_seq u64, epoch u64`.
//! Fields are accessed as four atomic 64-bit words. The owner of an index is
//! its only writer; readers validate with the epoch, which is odd while an
//! update is in flight and advances by two per completed update.

use std::cmp::Ordering as CmpOrdering;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub const STATUS_RECORD_BYTES: usize = 32;

const READ_SPINS: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexState {
    Free,
    Writing,
    Committed,
    Evicted,
}

impl IndexState {
    pub fn tag(self) -> u8 {
        match self {
            IndexState::Free => 0,
            IndexState::Writing => 1,
            IndexState::Committed => 2,
            IndexState::Evicted => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<IndexState> {
        Some(match tag {
            0 => IndexState::Free,
            1 => IndexState::Writing,
            2 => IndexState::Committed,
            3 => IndexState::Evicted,
            _ => return None,
        })
    }
}

/// `(logical_seq, node_id)`, ordered lexicographically.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HybridTimestamp {
    pub logical_seq: u64,
    pub node_id: u16,
}

impl HybridTimestamp {
    pub const ZERO: HybridTimestamp = HybridTimestamp {
        logical_seq: 0,
        node_id: 0,
    };

    pub fn new(logical_seq: u64, node_id: u16) -> Self {
        HybridTimestamp {
            logical_seq,
            node_id,
        }
    }
}

impl Ord for HybridTimestamp {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (self.logical_seq, self.node_id).cmp(&(other.logical_seq, other.node_id))
    }
}

impl PartialOrd for HybridTimestamp {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for HybridTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.logical_seq, self.node_id)
    }
}

/// Decoded status record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexStatus {
    pub state: IndexState,
    pub priority: f64,
    pub timestamp: HybridTimestamp,
    pub epoch: u64,
}

impl IndexStatus {
    pub fn is_selectable(&self) -> bool {
        self.state == IndexState::Committed && self.priority > 0.0
    }
}

/// View over one record's words inside the region.
#[derive(Clone, Copy)]
pub(crate) struct StatusCell<'a> {
    words: &'a [AtomicU64; 4],
}

impl<'a> StatusCell<'a> {
    /// # Safety
    /// `ptr` must be 8-byte aligned and valid for 32 bytes for `'a`.
    pub(crate) unsafe fn from_ptr(ptr: *mut u8) -> StatusCell<'a> {
        StatusCell {
            words: &*(ptr as *const [AtomicU64; 4]),
        }
    }

    fn pack_head(state: IndexState, node_id: u16) -> u64 {
        u64::from_le_bytes([
            state.tag(),
            0,
            node_id.to_le_bytes()[0],
            node_id.to_le_bytes()[1],
            0,
            0,
            0,
            0,
        ])
    }

    fn unpack_head(word: u64) -> (Option<IndexState>, u16) {
        let b = word.to_le_bytes();
        (IndexState::from_tag(b[0]), u16::from_le_bytes([b[2], b[3]]))
    }

    pub(crate) fn raw_epoch(&self) -> u64 {
        self.words[3].load(Ordering::SeqCst)
    }

    /// Single-writer update. Leaves the epoch even and larger by two.
    pub(crate) fn write(&self, state: IndexState, priority: f64, ts: HybridTimestamp) {
        let epoch = self.words[3].load(Ordering::SeqCst);
        let base = epoch & !1;
        self.words[3].store(base + 1, Ordering::SeqCst);
        self.words[0].store(Self::pack_head(state, ts.node_id), Ordering::SeqCst);
        self.words[1].store(priority.to_bits(), Ordering::SeqCst);
        self.words[2].store(ts.logical_seq, Ordering::SeqCst);
        self.words[3].store(base + 2, Ordering::SeqCst);
    }

    /// Consistent read; `None` if the record stayed mid-update (or is
    /// undecodable) for the whole spin budget.
    pub(crate) fn read(&self) -> Option<IndexStatus> {
        for _ in 0..READ_SPINS {
            let e1 = self.words[3].load(Ordering::SeqCst);
            if e1 & 1 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let head = self.words[0].load(Ordering::SeqCst);
            let prio = self.words[1].load(Ordering::SeqCst);
            let seq = self.words[2].load(Ordering::SeqCst);
            let e2 = self.words[3].load(Ordering::SeqCst);
            if e1 != e2 {
                continue;
            }
            let (state, node_id) = Self::unpack_head(head);
            return state.map(|state| IndexStatus {
                state,
                priority: f64::from_bits(prio),
                timestamp: HybridTimestamp::new(seq, node_id),
                epoch: e1,
            });
        }
        None
    }

    /// Read ignoring the in-flight marker; used by recovery after a writer died.
    pub(crate) fn read_unchecked(&self) -> (Option<IndexState>, u64) {
        let (state, _) = Self::unpack_head(self.words[0].load(Ordering::SeqCst));
        (state, self.words[3].load(Ordering::SeqCst))
    }

    /// Close a record left odd by a dead writer.
    pub(crate) fn repair(&self, state: IndexState, priority: f64, ts: HybridTimestamp) {
        let epoch = self.words[3].load(Ordering::SeqCst);
        let base = (epoch + 1) & !1;
        self.words[3].store(base + 1, Ordering::SeqCst);
        self.words[0].store(Self::pack_head(state, ts.node_id), Ordering::SeqCst);
        self.words[1].store(priority.to_bits(), Ordering::SeqCst);
        self.words[2].store(ts.logical_seq, Ordering::SeqCst);
        self.words[3].store(base + 2, Ordering::SeqCst);
    }
}

/// One selectable index as seen by a snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotEntry {
    pub local_index: u64,
    pub priority: f64,
    pub timestamp: HybridTimestamp,
    pub epoch: u64,
}

/// Selectable (committed, positive-priority) indices of one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusSnapshot {
    pub shard_id: u64,
    pub capacity: u64,
    pub entries: Vec<SnapshotEntry>,
}

impl StatusSnapshot {
    pub fn empty(shard_id: u64, capacity: u64) -> Self {
        StatusSnapshot {
            shard_id,
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn global_index(&self, entry: &SnapshotEntry) -> u64 {
        self.shard_id * self.capacity + entry.local_index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
