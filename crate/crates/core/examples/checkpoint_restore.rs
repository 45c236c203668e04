//! Checkpoint a running cluster, restore it and resume the bench identically.

use gear::runtime::{bench_loop, launch_cluster, restore_cluster, ClusterConfig};

fn main() -> gear::Result<()> {
    let mut handle = launch_cluster(&ClusterConfig {
        nodes: 2,
        clients_per_node: 2,
        capacity: 128,
        block_bytes: 256,
        ..ClusterConfig::default()
    })?;
    handle.prefill()?;

    let dir = std::env::temp_dir().join(format!("gear-checkpoint-{}", std::process::id()));
    handle.checkpoint(&dir)?;
    let restored = restore_cluster(&handle.config, &dir)?;
    let same = handle
        .nodes
        .iter()
        .zip(&restored.nodes)
        .all(|(a, b)| a.shard.bytes() == b.shard.bytes());
    println!("restored {} shards, byte-equal: {same}", restored.nodes.len());

    let before = bench_loop(&handle, 3)?;
    let after = bench_loop(&restored, 3)?;
    println!(
        "selection digest {:016x} vs {:016x}",
        before.selection_digest, after.selection_digest
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
