//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The batch-scaling criterion measures hardware, not logic: on a host with
//! little memory bandwidth or few cores it can fail without a defect. Its
//! FAIL line is always printed, but it only affects the exit status when
//! `GEAR_ACCEPTANCE_STRICT=1` is set.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4 9`.

mod common;

use std::collections::HashMap;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{chi_square, oracle_fifo, oracle_topk, run_state_machine_sequence, TestRng, CHI2_99_DF3};
use gear::collection::{Collector, CollectorServer};
use gear::index::{free_queue, shard_counters, LocalIndexManager, ManagerConfig};
use gear::placement::translate;
use gear::runtime::{
    bench_loop, fresh_cluster_id, launch_cluster, restore_cluster, ClusterConfig, CollectScope, MixedReport,
    PriorityDist,
};
use gear::schema::{ColumnSpec, Dtype};
use gear::selection::{
    select, select_local, weighted_sample, Candidate, SelectionConfig, SelectionMode, SelectionRequest, Strategy,
    WeightedIndexSet,
};
use gear::{Backing, HybridTimestamp, IndexState, Shard, ShardOptions, TrajectorySchema, World};

const BIN: &str = env!("CARGO_BIN_EXE_gear-bench");

/// Relative slack allowed between consecutive batch sizes before a drop in
/// throughput counts as a decrease (timing noise on a shared machine).
const SWEEP_NOISE: f64 = 0.10;
/// Required ratio between the largest and the smallest batch.
const SWEEP_MIN_GAIN: f64 = 3.0;
const SWEEP_BATCHES: [usize; 6] = [32, 64, 128, 256, 512, 1024];
const SWEEP_ROW_BYTES: usize = 1 << 20;
const SWEEP_REPS: usize = 3;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. worked two-shard collect

fn oracle_block(global: u64, column: usize, len: usize) -> Vec<u8> {
    let mut rng = TestRng::new(0xf164 ^ (global << 8) ^ column as u64);
    (0..len).map(|_| rng.next_u64() as u8).collect()
}

fn figure_shard(shard_id: u64) -> Arc<Shard> {
    let schema = TrajectorySchema::new(vec![
        ColumnSpec::new("col0", Dtype::F32, [4]),
        ColumnSpec::new("col1", Dtype::I32, [2, 3]),
    ])
    .unwrap();
    let shard = Arc::new(Shard::create(&schema, 24, shard_id, &Backing::Private, &ShardOptions::default()).unwrap());
    let mut mgr = LocalIndexManager::attach(Arc::clone(&shard), 0, ManagerConfig::default()).unwrap();
    for _ in 0..24 {
        let mut b = mgr.allocate().unwrap();
        let g = b.global_index();
        for (c, view) in b.views().into_iter().enumerate() {
            let len = view.len();
            view.copy_from_slice(&oracle_block(g, c, len));
        }
        mgr.commit_now(&mut b, 1.0).unwrap();
    }
    shard
}

fn criterion_1() -> Outcome {
    let request = [2u64, 4, 25, 26];
    let routes = translate(&request, 24).map_err(err)?;
    let routed: Vec<(u64, Vec<u64>)> = routes.iter().map(|(s, r)| (*s, r.local_indices.clone())).collect();
    ensure(routed == vec![(0, vec![2, 4]), (1, vec![1, 2])], || format!("routes {routed:?}"))?;

    let shards = [figure_shard(0), figure_shard(1)];
    let server = CollectorServer::start(Arc::clone(&shards[1]), "127.0.0.1:0").map_err(err)?;
    let collector = Collector::new(Arc::clone(&shards[0]), HashMap::from([(1, server.local_addr())]));
    let batch = collector.collect(&request, &["col0", "col1"]).map_err(err)?;
    ensure(batch.global_indices == request, || "rows out of request order".into())?;
    for (c, column) in batch.columns.iter().enumerate() {
        for (r, &g) in request.iter().enumerate() {
            ensure(column.row(r) == &oracle_block(g, c, column.block_bytes())[..], || {
                format!("row {r} of col{c} differs from the oracle")
            })?;
        }
    }
    Ok(format!("routes {routed:?}, 4 rows x 2 columns byte-equal"))
}

// ---------------------------------------------------------------------------
// 2. weighted-sampling statistics

fn criterion_2() -> Outcome {
    let set = WeightedIndexSet::new(vec![0, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0]).map_err(err)?;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let sampled = weighted_sample(&set, 100_000, 0xc41 + seed * 7919, 4).map_err(err)?;
        let mut counts = [0u64; 4];
        for g in sampled.global_indices {
            counts[g as usize] += 1;
        }
        let stat = chi_square(&counts, &[0.1, 0.2, 0.3, 0.4]);
        worst = worst.max(stat);
        if stat >= CHI2_99_DF3 {
            failures += 1;
        }
    }
    ensure(failures <= 1, || format!("{failures} of 20 seeds rejected"))?;
    Ok(format!("{failures}/20 seeds rejected at 99%, max chi2 {worst:.2}"))
}

// ---------------------------------------------------------------------------
// 3. determinism

fn random_candidates(rng: &mut TestRng, n: u64, node: u64, capacity: u64) -> Vec<Candidate> {
    (0..n)
        .map(|i| Candidate {
            global_index: node * capacity + i,
            // a zero weight now and then, and plenty of ties
            weight: rng.below(16) as f64 * 0.25,
            timestamp: HybridTimestamp::new(rng.below(n.max(1) * 2), node as u16),
        })
        .collect()
}

fn split_world(rng: &mut TestRng, m: usize, total: u64) -> Vec<Vec<Candidate>> {
    // random cut points split exactly `total` candidates over the nodes
    let mut cuts: Vec<u64> = (1..m).map(|_| rng.below(total + 1)).collect();
    cuts.push(0);
    cuts.push(total);
    cuts.sort_unstable();
    let capacity = total.max(1);
    cuts.windows(2)
        .enumerate()
        .map(|(node, w)| random_candidates(rng, w[1] - w[0], node as u64, capacity))
        .collect()
}

/// Run `select` on every rank of an in-process world; returns each rank's
/// result (or error text) and the total bytes put on the wire.
fn run_world(
    parts: &[Vec<Candidate>],
    request: &SelectionRequest,
    config: &SelectionConfig,
) -> (Vec<Result<Vec<u64>, String>>, u64) {
    let worlds = World::local_group(parts.len());
    std::thread::scope(|s| {
        let handles: Vec<_> = worlds
            .into_iter()
            .zip(parts)
            .map(|(mut world, local)| {
                s.spawn(move || {
                    let r = select(&mut world, local, request, config).map(|r| r.global_indices).map_err(err);
                    (r, world.bytes_sent())
                })
            })
            .collect();
        let mut results = Vec::new();
        let mut bytes = 0;
        for h in handles {
            let (r, b) = h.join().expect("rank panicked");
            results.push(r);
            bytes += b;
        }
        (results, bytes)
    })
}

fn criterion_3() -> Outcome {
    let mut rng = TestRng::new(3);
    let mut checked = 0;
    for strategy in [Strategy::Uniform, Strategy::Weighted, Strategy::Fifo, Strategy::Topk] {
        for case in 0..100 {
            let m = rng.range(1, 4) as usize;
            let total = rng.range(1, 5000);
            let parts = split_world(&mut rng, m, total);
            let flat: Vec<Candidate> = parts.concat();
            let selectable = flat.iter().filter(|c| c.weight > 0.0).count() as u64;
            if selectable == 0 {
                continue;
            }
            let with_replacement = rng.chance(0.7);
            let k = if with_replacement { rng.range(1, 512) } else { rng.range(1, selectable.min(512)) };
            let mut request = SelectionRequest::new(strategy, k as usize, rng.next_u64());
            request.with_replacement = with_replacement;
            let run = |s| select_local(&flat, &request, s).map(|r| r.global_indices).map_err(err);
            let first = run(1);
            ensure(first.is_ok(), || format!("{strategy:?} case {case}: {first:?}"))?;
            ensure(run(1) == first, || format!("{strategy:?} case {case}: rerun differs"))?;
            ensure(run(8) == first, || format!("{strategy:?} case {case}: parallelism 8 differs"))?;
            let config = SelectionConfig {
                parallelism: 1 + case % 8,
                mode: SelectionMode::Centralized,
            };
            let (ranks, _) = run_world(&parts, &request, &config);
            for (rank, r) in ranks.iter().enumerate() {
                ensure(r == &first, || format!("{strategy:?} case {case}: rank {rank} of {m} differs"))?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (snapshot, seed) pairs identical across reruns, s in {{1,8}} and all ranks"))
}

// ---------------------------------------------------------------------------
// 4. decentralized equals the full-sort oracle

fn criterion_4() -> Outcome {
    let mut rng = TestRng::new(4);
    let mut largest = 0;
    for world in 0..1000 {
        let m = rng.range(1, 4) as usize;
        // mostly small worlds, with a tail up to 10^5 candidates
        let total = if world % 20 == 0 { rng.range(50_000, 100_000) } else { rng.range(1, 5_000) };
        let parts = split_world(&mut rng, m, total);
        let flat: Vec<Candidate> = parts.concat();
        largest = largest.max(flat.len());
        let k = rng.range(1, 256) as usize;
        for strategy in [Strategy::Fifo, Strategy::Topk] {
            let expected = match strategy {
                Strategy::Topk => oracle_topk(&flat, k),
                _ => oracle_fifo(&flat, k),
            };
            let request = SelectionRequest::new(strategy, k, 0);
            for mode in [SelectionMode::Decentralized, SelectionMode::Centralized] {
                let config = SelectionConfig { parallelism: 2, mode };
                let (ranks, _) = run_world(&parts, &request, &config);
                for r in ranks {
                    match r {
                        Ok(v) => ensure(v == expected, || format!("world {world} {strategy:?} {mode:?} differs"))?,
                        Err(e) => ensure(expected.is_empty(), || format!("world {world}: {e}"))?,
                    }
                }
            }
        }
    }
    Ok(format!("1000 worlds, up to {largest} candidates, both modes equal the oracle"))
}

// ---------------------------------------------------------------------------
// 5. eviction state machine

fn criterion_5() -> Outcome {
    let mut steps = 0;
    for seed in 0..10_000u64 {
        steps += run_state_machine_sequence(seed).map_err(|e| format!("sequence {seed}: {e}"))?;
    }
    Ok(format!("10000 sequences, {steps} steps matched the reference"))
}

// ---------------------------------------------------------------------------
// 6. multi-process integrity

fn criterion_6() -> Outcome {
    let cluster = fresh_cluster_id();
    let schema = TrajectorySchema::new(vec![
        ColumnSpec::new("obs", Dtype::F32, [16, 4]),
        ColumnSpec::new("action", Dtype::I64, [2]),
        ColumnSpec::new("reward", Dtype::F64, [1]),
    ])
    .map_err(err)?;
    let shard = Shard::create(
        &schema,
        1024,
        0,
        &Backing::Shared {
            cluster_id: cluster.clone(),
        },
        &ShardOptions {
            partitions: 8,
            ..ShardOptions::default()
        },
    )
    .map_err(err)?;
    let children = (0..8)
        .map(|p| {
            Command::new(BIN)
                .args(["worker", "mixed", "--cluster", &cluster, "--shard", "0"])
                .args(["--partition", &p.to_string(), "--ops", "10000", "--seed", &(60 + p).to_string()])
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .spawn()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let mut verified = 0;
    let mut failures = 0;
    for child in children {
        let out = child.wait_with_output().map_err(err)?;
        ensure(out.status.success(), || {
            format!("worker exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr))
        })?;
        let report: MixedReport = serde_json::from_slice(&out.stdout).map_err(err)?;
        verified += report.verified_rows;
        failures += report.failures;
    }
    let counts = shard.state_counts();
    let counters = shard_counters(&shard);
    ensure(failures == 0, || format!("{failures} byte-fidelity failures"))?;
    ensure(counts[IndexState::Writing.tag() as usize] == 0, || "rows left WRITING".into())?;
    ensure(counters.expected_committed() == counts[2] as i64, || {
        format!("conservation broken: {counters:?} vs {counts:?}")
    })?;
    Ok(format!("8 x 10000 ops, {verified} rows verified, {} committed", counts[2]))
}

// ---------------------------------------------------------------------------
// 7. batch-size scaling

fn criterion_7() -> Outcome {
    let mut handle = launch_cluster(&ClusterConfig {
        nodes: 2,
        clients_per_node: 1,
        capacity: 64,
        block_bytes: SWEEP_ROW_BYTES,
        strategy: Strategy::Uniform,
        collect: CollectScope::Slice,
        mock: false,
        priority: PriorityDist::Constant { value: 1.0 },
        ..ClusterConfig::default()
    })
    .map_err(err)?;
    handle.prefill().map_err(err)?;
    let mut best = vec![0.0f64; SWEEP_BATCHES.len()];
    for rep in 0..SWEEP_REPS {
        for (i, &batch) in SWEEP_BATCHES.iter().enumerate() {
            handle.config.batch_size = batch;
            handle.config.seed = rep as u64;
            let report = bench_loop(&handle, 2).map_err(err)?;
            best[i] = best[i].max(report.throughput_mean);
        }
    }
    let shape: Vec<String> = SWEEP_BATCHES
        .iter()
        .zip(&best)
        .map(|(b, t)| format!("{b}:{:.2}", t / 1e9))
        .collect();
    let shape = format!("GB/s {}", shape.join(" "));
    for w in best.windows(2) {
        ensure(w[1] >= w[0] * (1.0 - SWEEP_NOISE), || format!("throughput decreases; {shape}"))?;
    }
    let gain = best[best.len() - 1] / best[0];
    ensure(gain >= SWEEP_MIN_GAIN, || format!("gain {gain:.2}x < {SWEEP_MIN_GAIN}x; {shape}"))?;
    Ok(format!("gain {gain:.2}x; {shape}"))
}

// ---------------------------------------------------------------------------
// 8. communication bound

fn criterion_8() -> Outcome {
    let mut rng = TestRng::new(8);
    let mut lines = Vec::new();
    for (m, k) in [(2usize, 32u64), (4, 64), (4, 256)] {
        let n = 100 * k;
        let parts: Vec<Vec<Candidate>> = (0..m).map(|node| random_candidates(&mut rng, n, node as u64, n)).collect();
        let request = SelectionRequest::new(Strategy::Topk, k as usize, 0);
        let run = |mode| {
            run_world(&parts, &request, &SelectionConfig { parallelism: 1, mode })
        };
        let (dec, dec_bytes) = run(SelectionMode::Decentralized);
        let (cen, cen_bytes) = run(SelectionMode::Centralized);
        ensure(dec == cen, || format!("m={m} k={k}: modes disagree"))?;
        let bound = m as u64 * k * 32 + 1024;
        ensure(dec_bytes <= bound, || format!("m={m} k={k}: decentralized {dec_bytes} B > {bound} B"))?;
        // centralized ships every non-root candidate: at least (m-1)·n records
        let floor = (m as u64 - 1) * n * 16;
        ensure(cen_bytes >= floor, || format!("m={m} k={k}: centralized {cen_bytes} B < {floor} B"))?;
        lines.push(format!("m={m} k={k}: {dec_bytes} B <= {bound} B vs centralized {cen_bytes} B"));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------
// 9. binary-search step count

fn criterion_9() -> Outcome {
    let mut rng = TestRng::new(9);
    let mut lines = Vec::new();
    for log_n in [10u32, 20] {
        let n = 1usize << log_n;
        let weights: Vec<f64> = (0..n).map(|_| 0.01 + rng.unit()).collect();
        let set = WeightedIndexSet::new((0..n as u64).collect(), weights).map_err(err)?;
        for k in [32usize, 1024] {
            let sampled = weighted_sample(&set, k, rng.next_u64(), 4).map_err(err)?;
            let bound = k as u64 * n.ilog2() as u64;
            let total = sampled.stats.total();
            ensure(total <= bound, || format!("N=2^{log_n} k={k}: {total} comparisons > {bound}"))?;
            lines.push(format!("N=2^{log_n} k={k}: {total}<={bound}"));
        }
    }
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------------------
// 10. checkpoint and restore

fn criterion_10() -> Outcome {
    let mut handle = launch_cluster(&ClusterConfig {
        nodes: 2,
        clients_per_node: 2,
        capacity: 256,
        block_bytes: 512,
        batch_size: 64,
        strategy: Strategy::Weighted,
        ..ClusterConfig::default()
    })
    .map_err(err)?;
    handle.prefill().map_err(err)?;
    // churn so queue order is non-trivial
    for node in &mut handle.nodes {
        for manager in &mut node.managers {
            for _ in 0..5 {
                let victim = manager.select_victim().map_err(err)?;
                manager.release(victim).map_err(err)?;
            }
        }
    }
    let dir = tempfile::tempdir().map_err(err)?;
    handle.checkpoint(dir.path()).map_err(err)?;
    let restored = restore_cluster(&handle.config, dir.path()).map_err(err)?;
    for (a, b) in handle.nodes.iter().zip(&restored.nodes) {
        ensure(a.shard.bytes() == b.shard.bytes(), || format!("shard {} image differs", a.node_id))?;
        for p in 0..a.shard.partitions() {
            ensure(free_queue(&a.shard, p) == free_queue(&b.shard, p), || {
                format!("shard {} partition {p} queue differs", a.node_id)
            })?;
        }
    }
    let before = bench_loop(&handle, 5).map_err(err)?;
    let after = bench_loop(&restored, 5).map_err(err)?;
    ensure(before.selection_digest == after.selection_digest, || "selections differ".into())?;
    ensure(before.payload_checksum == after.payload_checksum, || "payloads differ".into())?;
    Ok(format!(
        "2 shards byte-equal, 5 bench iterations with digest {:016x}",
        after.selection_digest
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

/// Criteria whose outcome depends on the host rather than the code.
const HARDWARE_BOUND: [u32; 1] = [7];

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "two-shard collect", budget: Duration::from_secs(1), run: criterion_1 },
    Criterion { id: 2, name: "weighted-sampling statistics", budget: Duration::from_secs(10), run: criterion_2 },
    Criterion { id: 3, name: "determinism", budget: Duration::from_secs(30), run: criterion_3 },
    Criterion { id: 4, name: "decentralized equals oracle", budget: Duration::from_secs(60), run: criterion_4 },
    Criterion { id: 5, name: "eviction state machine", budget: Duration::from_secs(60), run: criterion_5 },
    Criterion { id: 6, name: "multi-process integrity", budget: Duration::from_secs(120), run: criterion_6 },
    Criterion { id: 7, name: "batch-size scaling", budget: Duration::from_secs(120), run: criterion_7 },
    Criterion { id: 8, name: "communication bound", budget: Duration::from_secs(10), run: criterion_8 },
    Criterion { id: 9, name: "binary-search step count", budget: Duration::from_secs(10), run: criterion_9 },
    Criterion { id: 10, name: "checkpoint and restore", budget: Duration::from_secs(30), run: criterion_10 },
];

fn main() {
    // libtest-style flags (e.g. --nocapture) are ignored; bare numbers pick criteria
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("GEAR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut fatal = 0;
    let mut waived = 0;
    for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= c.budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took longer than {:?}", c.budget))
            }
        });
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {} ({detail}) [{secs:.2}s]", c.id, c.name),
            Err(detail) => {
                println!("FAIL criterion {}: {} ({detail}) [{secs:.2}s]", c.id, c.name);
                if strict || !HARDWARE_BOUND.contains(&c.id) {
                    fatal += 1;
                } else {
                    waived += 1;
                }
            }
        }
    }
    if waived > 0 {
        println!("{waived} hardware-bound criteria failed; set GEAR_ACCEPTANCE_STRICT=1 to make this fatal");
    }
    if fatal > 0 {
        println!("{fatal} acceptance criteria failed");
        std::process::exit(1);
    }
}
