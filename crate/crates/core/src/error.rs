use std::io;

use thiserror::Error;

use crate::status::IndexState;

pub type Result<T, E = GearError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GearError {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shared region `{name}`: {source}")]
    Region {
        name: String,
        #[source]
        source: io::Error,
    },

    #[error("shard of {requested} bytes exceeds the memory budget of {budget} bytes")]
    MemoryBudget { requested: u64, budget: u64 },

    #[error("corrupt shard header: {0}")]
    Header(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("index {index} out of range for capacity {capacity}")]
    IndexOutOfRange { index: u64, capacity: u64 },

    #[error("no free index and no evictable victim in partition {partition}")]
    AllocationExhausted { partition: usize },

    #[error("index {index} is {state:?}, expected {expected}")]
    InvalidState {
        index: u64,
        state: IndexState,
        expected: &'static str,
    },

    #[error("write buffer for index {0} was already committed")]
    AlreadyCommitted(u64),

    #[error("negative or non-finite priority {0}")]
    InvalidPriority(f64),

    #[error("no committed index to evict")]
    NoVictim,

    #[error("shard is not quiescent: {0} indices are being written")]
    NotQuiescent(usize),

    #[error("selection: {0}")]
    Selection(String),

    #[error("stale indices: {0:?}")]
    StaleIndices(Vec<u64>),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("collector for shard {shard_id} returned status {status}")]
    RemoteStatus { shard_id: u64, status: u8 },

    #[error("no route to shard {0}")]
    NoRoute(u64),

    #[error("configuration: {0}")]
    Config(String),

    #[error("worker failed: {0}")]
    Worker(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl GearError {
    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        GearError::Protocol(msg.into())
    }
}
