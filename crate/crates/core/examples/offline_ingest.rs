//! Export a dataset from one cluster and ingest it into another, placing
//! high-priority rows on the head nodes of the pipeline.

use gear::runtime::{export_dataset, ingest_offline, launch_cluster, ClusterConfig};
use gear::selection::candidates;

fn main() -> gear::Result<()> {
    let mut source = launch_cluster(&ClusterConfig {
        capacity: 64,
        block_bytes: 32,
        ..ClusterConfig::default()
    })?;
    source.prefill()?;
    let path = std::env::temp_dir().join(format!("gear-dataset-{}.bin", std::process::id()));
    let shards: Vec<_> = source.nodes.iter().map(|n| n.shard.as_ref()).collect();
    let exported = export_dataset(&shards, &path)?;
    println!("exported {exported} rows");

    let mut target = launch_cluster(&ClusterConfig {
        nodes: 4,
        clients_per_node: 2,
        capacity: 32,
        block_bytes: 32,
        pipeline_groups: vec![vec![0, 1], vec![2, 3]],
        prefill: false,
        ..ClusterConfig::default()
    })?;
    let ingested = ingest_offline(&mut target, &path)?;
    println!("ingested {ingested} rows");
    for node in &target.nodes {
        let rows = candidates(&node.shard.snapshot());
        let mean = rows.iter().map(|c| c.weight).sum::<f64>() / rows.len().max(1) as f64;
        println!("node {}: {} rows, mean priority {mean:.3}", node.node_id, rows.len());
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
