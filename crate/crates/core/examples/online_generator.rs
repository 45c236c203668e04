//! Generate trajectories online at a fixed rate while the buffer fills.

use std::time::Duration;

use gear::runtime::{launch_cluster, run_online_generator, ClusterConfig, PriorityDist};
use gear::selection::candidates;

fn main() -> gear::Result<()> {
    let mut handle = launch_cluster(&ClusterConfig {
        nodes: 2,
        clients_per_node: 2,
        capacity: 256,
        block_bytes: 64,
        ..ClusterConfig::default()
    })?;
    let written = run_online_generator(
        &mut handle,
        400.0,
        Duration::from_millis(500),
        PriorityDist::Uniform { low: 0.5, high: 2.0 },
        11,
    )?;
    println!("generated {written} trajectories");
    for node in &handle.nodes {
        println!("node {}: {} selectable", node.node_id, candidates(&node.shard.snapshot()).len());
    }
    Ok(())
}
