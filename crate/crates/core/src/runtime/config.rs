use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{GearError, Result};
use crate::index::RemovalStrategy;
use crate::placement::ClusterTopology;
use crate::schema::{ColumnSpec, TrajectorySchema};
use crate::selection::{SelectionMode, Strategy};

/// What each client collects after a selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectScope {
    /// Client `r` of `W` collects rows `[r·k/W, (r+1)·k/W)` of the result.
    #[default]
    Slice,
    /// Every client collects the whole result.
    Full,
}

/// How bench clients are run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    /// One thread per client inside the launcher, collectives over channels.
    #[default]
    Threads,
    /// One OS process per client, collectives over loopback TCP.
    Processes,
}

/// Priority assigned to synthetic trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorityDist {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for PriorityDist {
    fn default() -> Self {
        PriorityDist::Uniform { low: 0.0, high: 1.0 }
    }
}

impl PriorityDist {
    /// Map a uniform draw `u ∈ [0, 1)` to a priority.
    pub fn at(&self, u: f64) -> f64 {
        match *self {
            PriorityDist::Constant { value } => value,
            PriorityDist::Uniform { low, high } => low + (high - low) * u,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorityDist::Constant { value } => value.is_finite() && value >= 0.0,
            PriorityDist::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low >= 0.0 && high >= low
            }
        };
        if ok {
            Ok(())
        } else {
            Err(GearError::Config(format!("invalid priority distribution {self:?}")))
        }
    }
}

/// Cluster and bench settings, loadable from a TOML file.
///
/// Unset keys take their defaults; an empty `columns` list means one
/// synthetic `u8` column of `block_bytes` bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Namespace of the shared-memory regions; generated when empty.
    pub cluster_id: String,
    pub nodes: usize,
    pub clients_per_node: usize,
    /// Rows per shard.
    pub capacity: u64,
    pub columns: Vec<ColumnSpec>,
    pub block_bytes: usize,
    pub strategy: Strategy,
    pub mode: SelectionMode,
    pub batch_size: usize,
    pub seed: u64,
    /// Collector server address per node; empty means ephemeral loopback ports.
    pub addresses: Vec<String>,
    /// Empty means every node is its own group.
    pub pipeline_groups: Vec<Vec<usize>>,
    pub removal_strategy: RemovalStrategy,
    /// Per-partition cap on selectable rows.
    pub max_selectable: Option<u64>,
    /// Sampling kernel workers.
    pub parallelism: usize,
    pub iterations: usize,
    pub collect: CollectScope,
    pub client_mode: ClientMode,
    /// Checksum collected payloads and drop them.
    pub mock: bool,
    /// Fill every shard before benchmarking.
    pub prefill: bool,
    pub priority: PriorityDist,
    /// Executable run by client processes; defaults to the current one.
    pub worker_exe: Option<PathBuf>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            cluster_id: String::new(),
            nodes: 1,
            clients_per_node: 1,
            capacity: 1024,
            columns: Vec::new(),
            block_bytes: 4096,
            strategy: Strategy::Uniform,
            mode: SelectionMode::Centralized,
            batch_size: 32,
            seed: 0,
            addresses: Vec::new(),
            pipeline_groups: Vec::new(),
            removal_strategy: RemovalStrategy::Fifo,
            max_selectable: None,
            parallelism: 1,
            iterations: 10,
            collect: CollectScope::Slice,
            client_mode: ClientMode::Threads,
            mock: true,
            prefill: true,
            priority: PriorityDist::default(),
            worker_exe: None,
        }
    }
}

static CLUSTER_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Unique cluster id for this process.
pub fn fresh_cluster_id() -> String {
    let n = CLUSTER_COUNTER.fetch_add(1, Ordering::Relaxed);
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    format!("g{}x{n}x{nanos:x}", std::process::id())
}

impl ClusterConfig {
    pub fn from_toml_str(text: &str) -> Result<ClusterConfig> {
        toml::from_str(text).map_err(|e| GearError::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<ClusterConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GearError::Config(format!("{}: {e}", path.display())))?;
        ClusterConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn total_clients(&self) -> usize {
        self.nodes * self.clients_per_node
    }

    pub fn schema(&self) -> Result<TrajectorySchema> {
        if self.columns.is_empty() {
            TrajectorySchema::synthetic(self.block_bytes)
        } else {
            TrajectorySchema::new(self.columns.clone())
        }
    }

    pub fn topology(&self) -> Result<ClusterTopology> {
        if self.pipeline_groups.is_empty() {
            ClusterTopology::flat(self.nodes, self.capacity)
        } else {
            ClusterTopology::new(self.nodes, self.pipeline_groups.clone(), self.capacity)
        }
    }

    /// Check every invariant; all failures are [`GearError::Config`].
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("clients_per_node", self.clients_per_node),
            ("batch_size", self.batch_size),
            ("parallelism", self.parallelism),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GearError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.nodes > u16::MAX as usize {
            return Err(GearError::Config(format!("too many nodes ({})", self.nodes)));
        }
        if self.capacity < self.clients_per_node as u64 {
            return Err(GearError::Config(format!(
                "capacity {} cannot be split over {} clients",
                self.capacity, self.clients_per_node
            )));
        }
        if self.columns.is_empty() && self.block_bytes == 0 {
            return Err(GearError::Config("block_bytes must be at least 1".into()));
        }
        self.schema().map_err(|e| GearError::Config(e.to_string()))?;
        self.topology().map_err(|e| GearError::Config(e.to_string()))?;
        if !self.addresses.is_empty() && self.addresses.len() != self.nodes {
            return Err(GearError::Config(format!(
                "{} addresses for {} nodes",
                self.addresses.len(),
                self.nodes
            )));
        }
        let mut seen = HashSet::new();
        for a in &self.addresses {
            if !seen.insert(a.as_str()) {
                return Err(GearError::Config(format!("duplicate address {a}")));
            }
        }
        if self.mode == SelectionMode::Decentralized && !self.strategy.is_decentralizable() {
            return Err(GearError::Config(format!(
                "strategy {:?} cannot run in decentralized mode",
                self.strategy
            )));
        }
        if self.max_selectable == Some(0) {
            return Err(GearError::Config("max_selectable must be at least 1".into()));
        }
        if !self
            .cluster_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(GearError::Config(format!("bad cluster id {:?}", self.cluster_id)));
        }
        self.priority.validate()
    }
}
