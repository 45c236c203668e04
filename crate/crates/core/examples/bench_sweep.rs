//! Sweep the batch size of the select-collect loop and print throughput.
//!
//! `cargo run --release --example bench_sweep -- [row_bytes]`

use gear::runtime::{bench_loop, launch_cluster, ClusterConfig};

fn main() -> gear::Result<()> {
    let row_bytes = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(64 << 10);
    let mut handle = launch_cluster(&ClusterConfig {
        nodes: 2,
        clients_per_node: 2,
        capacity: 256,
        block_bytes: row_bytes,
        mock: false,
        ..ClusterConfig::default()
    })?;
    handle.prefill()?;
    println!("batch,throughput_gbps,p50_gbps");
    for batch in [32, 64, 128, 256, 512, 1024] {
        handle.config.batch_size = batch;
        let report = bench_loop(&handle, 5)?;
        println!(
            "{batch},{:.3},{:.3}",
            report.throughput_mean / 1e9,
            report.throughput_p50 / 1e9
        );
    }
    Ok(())
}
