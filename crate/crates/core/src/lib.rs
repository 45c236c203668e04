//! Sharded, columnar experience-replay storage with distributed trajectory
//! selection and collection.
//!
//! Trajectories live in equal-capacity shards, one per node. Each shard is a
//! shared-memory region of column tables plus a status table; client
//! processes write rows in place through a local index manager, select rows
//! with collective sampling protocols, and gather selected rows either
//! straight from local shard memory or from remote collector servers.

pub mod collection;
pub mod error;
pub mod index;
pub mod placement;
pub mod region;
pub mod runtime;
pub mod schema;
pub mod selection;
pub mod shard;
pub mod status;
pub mod world;

pub use error::{GearError, Result};
pub use index::{LocalIndexManager, ManagerConfig, RemovalStrategy, WriteBuffer};
pub use region::Backing;
pub use schema::{ColumnSpec, Dtype, TrajectorySchema};
pub use shard::{Shard, ShardHeader, ShardOptions};
pub use status::{HybridTimestamp, IndexState, IndexStatus, SnapshotEntry, StatusSnapshot};
pub use collection::{Collector, CollectorServer, TrajectoryBatch};
pub use placement::ClusterTopology;
pub use selection::{SelectionConfig, SelectionMode, SelectionRequest, SelectionResult, Strategy};
pub use world::World;
