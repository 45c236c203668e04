//! Globally synchronized select → collect → barrier loop.

use std::collections::HashMap;
use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::collection::Collector;
use crate::error::{GearError, Result};
use crate::schema::{fnv1a64, fnv1a64_continue};
use crate::selection::rng::CounterRng;
use crate::selection::{candidates, select, SelectionConfig, SelectionRequest};
use crate::shard::{partition_range, Shard};
use crate::world::{World, DEFAULT_TIMEOUT};

use super::cluster::ClusterHandle;
use super::config::{ClientMode, ClusterConfig, CollectScope};
use super::pattern::block_checksum;

/// One iteration, aggregated over all clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSample {
    pub iteration: usize,
    /// Slowest client's selection latency.
    pub select_secs: f64,
    /// Slowest client's collection latency.
    pub collect_secs: f64,
    /// Bytes collected by all clients.
    pub bytes: u64,
    /// `bytes` over the slowest client's select + collect time.
    pub throughput: f64,
}

/// Result of [`bench_loop`]; stable JSON and CSV layouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: ClusterConfig,
    pub clients: usize,
    pub iterations: Vec<IterationSample>,
    pub total_bytes: u64,
    /// Bytes per second over the whole loop.
    pub throughput_mean: f64,
    pub throughput_p50: f64,
    pub throughput_p90: f64,
    pub throughput_p99: f64,
    /// FNV-1a over every iteration's selected indices (identical on all clients).
    pub selection_digest: u64,
    /// Wrapping sum of per-block FNV-1a checksums (mock mode only, else 0).
    pub payload_checksum: u64,
    /// Collective bytes put on the wire by all clients.
    pub collective_bytes: u64,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// One row per iteration: `iteration,select_secs,collect_secs,bytes,throughput`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.iterations {
            w.serialize(s).map_err(|e| GearError::Worker(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| GearError::Worker(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// What one client measured.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClientReport {
    pub rank: usize,
    pub select_secs: Vec<f64>,
    pub collect_secs: Vec<f64>,
    pub bytes: Vec<u64>,
    pub digests: Vec<u64>,
    pub payload_checksum: u64,
    pub collective_bytes: u64,
}

/// Everything a client process needs to join a bench.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchPlan {
    pub config: ClusterConfig,
    pub endpoints: Vec<(u64, SocketAddr)>,
    pub root: SocketAddr,
    pub iterations: usize,
}

/// Seed of iteration `i`.
pub fn iteration_seed(seed: u64, i: usize) -> u64 {
    CounterRng::new(seed).u64_at(i as u64)
}

/// Rows of a `k`-row result collected by `rank` of `world_size`.
pub fn client_slice(k: usize, rank: usize, world_size: usize, scope: CollectScope) -> std::ops::Range<usize> {
    match scope {
        CollectScope::Full => 0..k,
        CollectScope::Slice => k * rank / world_size..k * (rank + 1) / world_size,
    }
}

fn column_names(shard: &Shard) -> Vec<String> {
    shard.schema().columns().iter().map(|c| c.name.clone()).collect()
}

/// Client body shared by the thread and process modes.
pub fn run_client(
    config: &ClusterConfig,
    shard: &Shard,
    partition: usize,
    collector: &Collector,
    world: &mut World,
    iterations: usize,
) -> Result<ClientReport> {
    let (start, end) = partition_range(shard.capacity(), shard.partitions(), partition);
    let names = column_names(shard);
    let selection = SelectionConfig {
        parallelism: config.parallelism,
        mode: config.mode,
    };
    let mut report = ClientReport {
        rank: world.rank(),
        ..ClientReport::default()
    };
    for i in 0..iterations {
        let snapshot = shard.snapshot();
        let own: Vec<_> = candidates(&snapshot)
            .into_iter()
            .filter(|c| {
                let local = c.global_index - shard.global_index(0);
                (start..end).contains(&local)
            })
            .collect();
        let request = SelectionRequest::new(config.strategy, config.batch_size, iteration_seed(config.seed, i));

        let t0 = Instant::now();
        let result = select(world, &own, &request, &selection)?;
        let select_secs = t0.elapsed().as_secs_f64();
        let digest = result
            .global_indices
            .iter()
            .fold(fnv1a64(&[]), |h, g| fnv1a64_continue(h, &g.to_le_bytes()));

        let slice = client_slice(result.global_indices.len(), world.rank(), world.size(), config.collect);
        let t1 = Instant::now();
        let mut bytes = 0u64;
        if !slice.is_empty() {
            let batch = collector.collect(&result.global_indices[slice], &names)?;
            bytes = batch.total_bytes() as u64;
            if config.mock {
                for column in &batch.columns {
                    for r in 0..column.rows() {
                        report.payload_checksum = report
                            .payload_checksum
                            .wrapping_add(block_checksum(column.row(r)));
                    }
                }
            }
        }
        let collect_secs = t1.elapsed().as_secs_f64();
        world.barrier()?;

        report.select_secs.push(select_secs);
        report.collect_secs.push(collect_secs);
        report.bytes.push(bytes);
        report.digests.push(digest);
    }
    report.collective_bytes = world.bytes_sent();
    Ok(report)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Combine per-client reports; fails if clients saw different selections.
pub fn merge_reports(config: &ClusterConfig, mut clients: Vec<ClientReport>, iterations: usize) -> Result<BenchReport> {
    clients.sort_by_key(|c| c.rank);
    for c in &clients {
        if c.digests.len() != iterations || c.digests != clients[0].digests {
            return Err(GearError::Worker(format!(
                "client {} disagrees with client 0 on the selection results",
                c.rank
            )));
        }
    }
    let mut samples = Vec::with_capacity(iterations);
    let mut total_secs = 0.0;
    for i in 0..iterations {
        let select_secs = clients.iter().map(|c| c.select_secs[i]).fold(0.0, f64::max);
        let collect_secs = clients.iter().map(|c| c.collect_secs[i]).fold(0.0, f64::max);
        let slowest = clients
            .iter()
            .map(|c| c.select_secs[i] + c.collect_secs[i])
            .fold(0.0, f64::max);
        let bytes: u64 = clients.iter().map(|c| c.bytes[i]).sum();
        total_secs += slowest;
        samples.push(IterationSample {
            iteration: i,
            select_secs,
            collect_secs,
            bytes,
            throughput: if slowest > 0.0 { bytes as f64 / slowest } else { 0.0 },
        });
    }
    let total_bytes = samples.iter().map(|s| s.bytes).sum();
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.throughput).collect();
    sorted.sort_by(f64::total_cmp);
    let selection_digest = clients[0]
        .digests
        .iter()
        .fold(fnv1a64(&[]), |h, d| fnv1a64_continue(h, &d.to_le_bytes()));
    Ok(BenchReport {
        config: config.clone(),
        clients: clients.len(),
        total_bytes,
        throughput_mean: if total_secs > 0.0 { total_bytes as f64 / total_secs } else { 0.0 },
        throughput_p50: percentile(&sorted, 50.0),
        throughput_p90: percentile(&sorted, 90.0),
        throughput_p99: percentile(&sorted, 99.0),
        iterations: samples,
        selection_digest,
        payload_checksum: clients.iter().fold(0u64, |a, c| a.wrapping_add(c.payload_checksum)),
        collective_bytes: clients.iter().map(|c| c.collective_bytes).sum(),
    })
}

/// Run `iterations` of the bench loop on every client of the cluster.
pub fn bench_loop(handle: &ClusterHandle, iterations: usize) -> Result<BenchReport> {
    match handle.config.client_mode {
        ClientMode::Threads => bench_threads(handle, iterations),
        ClientMode::Processes => bench_processes(handle, iterations),
    }
}

fn bench_threads(handle: &ClusterHandle, iterations: usize) -> Result<BenchReport> {
    let config = &handle.config;
    let per_node = config.clients_per_node;
    let worlds = World::local_group(config.total_clients());
    let reports: Vec<Result<ClientReport>> = std::thread::scope(|s| {
        let workers: Vec<_> = worlds
            .into_iter()
            .enumerate()
            .map(|(rank, mut world)| {
                let node = &handle.nodes[rank / per_node];
                let collector = handle.collector(node.node_id);
                s.spawn(move || {
                    run_client(config, &node.shard, rank % per_node, &collector, &mut world, iterations)
                })
            })
            .collect();
        workers
            .into_iter()
            .map(|w| w.join().expect("bench client panicked"))
            .collect()
    });
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    merge_reports(config, reports, iterations)
}

fn free_loopback_addr() -> Result<SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    Ok(listener.local_addr()?)
}

fn bench_processes(handle: &ClusterHandle, iterations: usize) -> Result<BenchReport> {
    let config = &handle.config;
    let exe: PathBuf = match &config.worker_exe {
        Some(p) => p.clone(),
        None => std::env::current_exe()?,
    };
    let mut endpoints: Vec<(u64, SocketAddr)> = handle.endpoints().into_iter().collect();
    endpoints.sort();
    let plan = BenchPlan {
        config: config.clone(),
        endpoints,
        root: free_loopback_addr()?,
        iterations,
    };
    let dir = std::env::temp_dir().join(format!("gear-plan-{}", config.cluster_id));
    std::fs::create_dir_all(&dir)?;
    let plan_path = dir.join("plan.json");
    std::fs::File::create(&plan_path)?
        .write_all(serde_json::to_string(&plan).expect("plan is serializable").as_bytes())?;

    let mut children = Vec::new();
    for rank in 0..config.total_clients() {
        let child = Command::new(&exe)
            .args(["worker", "bench", "--plan"])
            .arg(&plan_path)
            .args(["--rank", &rank.to_string()])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| GearError::Worker(format!("cannot spawn {}: {e}", exe.display())))?;
        children.push(child);
    }
    let mut reports = Vec::new();
    let mut failure = None;
    for child in children {
        let out = child.wait_with_output()?;
        if !out.status.success() {
            failure.get_or_insert_with(|| {
                GearError::Worker(format!(
                    "client process exited with {}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                ))
            });
            continue;
        }
        match serde_json::from_slice::<ClientReport>(&out.stdout) {
            Ok(r) => reports.push(r),
            Err(e) => {
                failure.get_or_insert(GearError::Worker(format!("bad client report: {e}")));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    if let Some(e) = failure {
        return Err(e);
    }
    merge_reports(config, reports, iterations)
}

/// Body of a client process: join the bench described by `plan` as `rank`.
pub fn run_plan(plan: &BenchPlan, rank: usize) -> Result<ClientReport> {
    let config = &plan.config;
    let world_size = config.total_clients();
    if rank >= world_size {
        return Err(GearError::InvalidArgument(format!("rank {rank} of {world_size}")));
    }
    let node_id = rank / config.clients_per_node;
    let shard = Arc::new(Shard::open_by_id(&config.cluster_id, node_id as u64)?);
    let endpoints: HashMap<u64, SocketAddr> = plan
        .endpoints
        .iter()
        .copied()
        .filter(|&(id, _)| id != node_id as u64)
        .collect();
    let collector = Collector::new(Arc::clone(&shard), endpoints);
    let timeout = DEFAULT_TIMEOUT.max(Duration::from_secs(1));
    let mut world = if rank == 0 {
        World::tcp_root(TcpListener::bind(plan.root)?, world_size, timeout)?
    } else {
        World::tcp_join(plan.root, rank, world_size, timeout)?
    };
    run_client(
        config,
        &shard,
        rank % config.clients_per_node,
        &collector,
        &mut world,
        plan.iterations,
    )
}
