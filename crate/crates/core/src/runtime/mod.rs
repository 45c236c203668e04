//! Desk-scale cluster harness: configuration, launch, ingestion and the
//! benchmark loop.
//!
//! A node is emulated as a shared-memory shard plus a collector server on a
//! loopback port. Clients run as threads of the launcher or as separate
//! processes that open the shard by name; either way they coordinate only
//! through [`World`](crate::world::World) collectives.

mod bench;
mod cluster;
mod config;
mod dataset;
mod generator;
pub mod pattern;
mod worker;

pub use bench::{
    bench_loop, client_slice, iteration_seed, merge_reports, run_client, run_plan, BenchPlan, BenchReport,
    ClientReport, IterationSample,
};
pub use cluster::{launch_cluster, restore_cluster, ClusterHandle, NodeRuntime};
pub use config::{fresh_cluster_id, ClientMode, ClusterConfig, CollectScope, PriorityDist};
pub use dataset::{export_dataset, ingest_offline};
pub use generator::run_online_generator;
pub use worker::{hold_writes, mixed_workload, MixedReport};
