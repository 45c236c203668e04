use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::collection::{Collector, CollectorServer};
use crate::error::{GearError, Result};
use crate::index::{LocalIndexManager, ManagerConfig};
use crate::placement::ClusterTopology;
use crate::region::Backing;
use crate::schema::TrajectorySchema;
use crate::selection::rng::CounterRng;
use crate::shard::{Shard, ShardOptions};

use super::config::{fresh_cluster_id, ClusterConfig};
use super::pattern::fill_block;

/// One emulated machine: its shard, one index manager per client and the
/// collector server that exposes the shard to other nodes.
pub struct NodeRuntime {
    pub node_id: usize,
    pub shard: Arc<Shard>,
    pub managers: Vec<LocalIndexManager>,
    pub server: CollectorServer,
}

impl std::fmt::Debug for NodeRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeRuntime")
            .field("node_id", &self.node_id)
            .field("shard", &self.shard)
            .field("server", &self.server.local_addr())
            .finish()
    }
}

/// A running desk-scale cluster.
#[derive(Debug)]
pub struct ClusterHandle {
    pub config: ClusterConfig,
    pub schema: TrajectorySchema,
    pub topology: ClusterTopology,
    pub nodes: Vec<NodeRuntime>,
}

/// Create one shared-memory shard per node, partitioned among the node's
/// clients, and start a collector server for each.
///
/// Shards are named after `config.cluster_id` so client processes can open
/// them; they are unlinked when the handle is dropped.
pub fn launch_cluster(config: &ClusterConfig) -> Result<ClusterHandle> {
    config.validate()?;
    let mut config = config.clone();
    if config.cluster_id.is_empty() {
        config.cluster_id = fresh_cluster_id();
    }
    let schema = config.schema()?;
    let topology = config.topology()?;
    let backing = Backing::Shared {
        cluster_id: config.cluster_id.clone(),
    };
    let options = ShardOptions {
        partitions: config.clients_per_node,
        ..ShardOptions::default()
    };
    let mut nodes = Vec::with_capacity(config.nodes);
    for node_id in 0..config.nodes {
        let shard = Shard::create(&schema, config.capacity, node_id as u64, &backing, &options)?;
        nodes.push(start_node(&config, node_id, shard)?);
    }
    Ok(ClusterHandle {
        config,
        schema,
        topology,
        nodes,
    })
}

/// Relaunch a cluster from per-shard checkpoints written by
/// [`ClusterHandle::checkpoint`]. The restored shards get a fresh cluster id.
pub fn restore_cluster(config: &ClusterConfig, dir: impl AsRef<Path>) -> Result<ClusterHandle> {
    config.validate()?;
    let mut config = config.clone();
    config.cluster_id = fresh_cluster_id();
    let schema = config.schema()?;
    let topology = config.topology()?;
    let backing = Backing::Shared {
        cluster_id: config.cluster_id.clone(),
    };
    let mut nodes = Vec::with_capacity(config.nodes);
    for node_id in 0..config.nodes {
        let shard = Shard::restore(checkpoint_path(dir.as_ref(), node_id), &backing)?;
        if shard.shard_id() != node_id as u64
            || shard.capacity() != config.capacity
            || shard.partitions() != config.clients_per_node
            || shard.schema().schema_hash() != schema.schema_hash()
        {
            return Err(GearError::Config(format!(
                "checkpoint of node {node_id} does not match the cluster configuration"
            )));
        }
        nodes.push(start_node(&config, node_id, shard)?);
    }
    Ok(ClusterHandle {
        config,
        schema,
        topology,
        nodes,
    })
}

fn checkpoint_path(dir: &Path, node_id: usize) -> PathBuf {
    dir.join(format!("shard-{node_id}.ckpt"))
}

fn start_node(config: &ClusterConfig, node_id: usize, shard: Shard) -> Result<NodeRuntime> {
    let shard = Arc::new(shard);
    let managers = (0..config.clients_per_node)
        .map(|p| LocalIndexManager::attach(Arc::clone(&shard), p, manager_config(config, node_id)))
        .collect::<Result<Vec<_>>>()?;
    let addr = config
        .addresses
        .get(node_id)
        .map(String::as_str)
        .unwrap_or("127.0.0.1:0");
    let server = CollectorServer::start(Arc::clone(&shard), addr)?;
    Ok(NodeRuntime {
        node_id,
        shard,
        managers,
        server,
    })
}

pub(crate) fn manager_config(config: &ClusterConfig, node_id: usize) -> ManagerConfig {
    ManagerConfig {
        node_id: node_id as u16,
        removal: config.removal_strategy,
        max_selectable: config.max_selectable,
    }
}

/// Write one synthetic row through `manager` and commit it.
pub(crate) fn write_synthetic(manager: &mut LocalIndexManager, priority: f64) -> Result<u64> {
    let mut buf = manager.allocate()?;
    let global = buf.global_index();
    let epoch = buf.epoch() + 2;
    for (c, view) in buf.views().into_iter().enumerate() {
        fill_block(view, global, epoch, c);
    }
    manager.commit_now(&mut buf, priority)
}

impl ClusterHandle {
    /// Collector server address of every shard.
    pub fn endpoints(&self) -> HashMap<u64, SocketAddr> {
        self.nodes
            .iter()
            .map(|n| (n.node_id as u64, n.server.local_addr()))
            .collect()
    }

    /// Collector for a client on `node_id`.
    pub fn collector(&self, node_id: usize) -> Collector {
        let mut endpoints = self.endpoints();
        endpoints.remove(&(node_id as u64));
        Collector::new(Arc::clone(&self.nodes[node_id].shard), endpoints)
    }

    pub fn total_clients(&self) -> usize {
        self.config.total_clients()
    }

    /// Fill every partition of every shard with synthetic rows whose
    /// priorities come from `config.priority`. Returns the rows written.
    pub fn prefill(&mut self) -> Result<u64> {
        let dist = self.config.priority;
        let rng = CounterRng::new(self.config.seed ^ 0x5eed_f111);
        let mut written = 0u64;
        for node in &mut self.nodes {
            for manager in &mut node.managers {
                let rows = manager.range().end - manager.range().start;
                for _ in 0..rows {
                    let priority = dist.at(rng.f64_at(written));
                    write_synthetic(manager, priority)?;
                    written += 1;
                }
            }
        }
        Ok(written)
    }

    /// Checkpoint every shard into `dir` (created if missing). Fails with
    /// `NotQuiescent` while any row is being written.
    pub fn checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for node in &self.nodes {
            node.shard.checkpoint(checkpoint_path(dir.as_ref(), node.node_id))?;
        }
        Ok(())
    }

    /// Rows currently COMMITTED across the cluster.
    pub fn committed(&self) -> usize {
        self.nodes.iter().map(|n| n.shard.state_counts()[2]).sum()
    }
}
