//! Shard placement and global/local index translation.
//!
//! Shards have equal capacity, so global index `g` lives on shard
//! `g / capacity` at local index `g % capacity`. In the desk-scale cluster
//! shard ids equal node ids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GearError, Result};

/// Nodes and their pipeline-parallel groups. The first node of each group
/// runs the input layer and is the only reader of trajectories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTopology {
    pub nodes: usize,
    pub pipeline_groups: Vec<Vec<usize>>,
    pub shard_capacity: u64,
}

impl ClusterTopology {
    pub fn new(nodes: usize, pipeline_groups: Vec<Vec<usize>>, shard_capacity: u64) -> Result<Self> {
        let topo = ClusterTopology {
            nodes,
            pipeline_groups,
            shard_capacity,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Every node is its own group (no pipeline parallelism).
    pub fn flat(nodes: usize, shard_capacity: u64) -> Result<Self> {
        ClusterTopology::new(nodes, (0..nodes).map(|n| vec![n]).collect(), shard_capacity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(GearError::Config("topology needs at least one node".into()));
        }
        if self.shard_capacity == 0 {
            return Err(GearError::Config("shard capacity must be positive".into()));
        }
        let mut seen = vec![false; self.nodes];
        for group in &self.pipeline_groups {
            if group.is_empty() {
                return Err(GearError::Config("empty pipeline group".into()));
            }
            for &node in group {
                if node >= self.nodes {
                    return Err(GearError::Config(format!("unknown node {node} in pipeline group")));
                }
                if std::mem::replace(&mut seen[node], true) {
                    return Err(GearError::Config(format!("node {node} is in two pipeline groups")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(GearError::Config(format!("node {missing} is in no pipeline group")));
        }
        Ok(())
    }

    /// First node of every group, in group order.
    pub fn head_nodes(&self) -> Vec<usize> {
        self.pipeline_groups.iter().map(|g| g[0]).collect()
    }

    pub fn non_head_nodes(&self) -> Vec<usize> {
        let heads = self.head_nodes();
        (0..self.nodes).filter(|n| !heads.contains(n)).collect()
    }
}

/// Local indices routed to one shard, with their positions in the request.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShardRoute {
    pub local_indices: Vec<u64>,
    pub positions: Vec<usize>,
}

/// Split global indices by shard, keeping request positions.
pub fn translate(global_indices: &[u64], capacity: u64) -> Result<BTreeMap<u64, ShardRoute>> {
    if capacity == 0 {
        return Err(GearError::InvalidArgument("capacity must be positive".into()));
    }
    let mut routes: BTreeMap<u64, ShardRoute> = BTreeMap::new();
    for (pos, &g) in global_indices.iter().enumerate() {
        let route = routes.entry(g / capacity).or_default();
        route.local_indices.push(g % capacity);
        route.positions.push(pos);
    }
    Ok(routes)
}

/// Shard for a trajectory generated online: always the generating node.
pub fn place_online(origin_node: usize, topology: &ClusterTopology) -> Result<u64> {
    if origin_node >= topology.nodes {
        return Err(GearError::InvalidArgument(format!("unknown node {origin_node}")));
    }
    Ok(origin_node as u64)
}

/// Shards for one ingestion batch of offline trajectories.
///
/// The batch is ranked by priority (stable, so equal priorities keep input
/// order). The top `ceil(len * heads / nodes)` go round-robin to head-node
/// shards, the rest round-robin to the other shards. Without non-head nodes
/// everything goes to the heads.
pub fn place_offline(priorities: &[f64], topology: &ClusterTopology) -> Vec<u64> {
    let heads = topology.head_nodes();
    let others = topology.non_head_nodes();
    let mut order: Vec<usize> = (0..priorities.len()).collect();
    order.sort_by(|&a, &b| priorities[b].total_cmp(&priorities[a]));
    let top = if others.is_empty() {
        priorities.len()
    } else {
        (priorities.len() * heads.len()).div_ceil(topology.nodes)
    };
    let mut placement = vec![0u64; priorities.len()];
    for (rank, &i) in order.iter().enumerate() {
        placement[i] = if rank < top {
            heads[rank % heads.len()] as u64
        } else {
            others[(rank - top) % others.len()] as u64
        };
    }
    placement
}
