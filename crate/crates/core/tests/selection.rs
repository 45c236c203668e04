mod common;

use std::net::TcpListener;
use std::time::Duration;

use common::{chi_square, oracle_fifo, oracle_topk, TestRng, CHI2_99_DF3};
use gear::selection::{
    select, select_local, weighted_sample, Candidate, SelectionConfig, SelectionMode, SelectionRequest, Strategy,
    WeightedIndexSet,
};
use gear::{HybridTimestamp, World};

fn random_world(rng: &mut TestRng, m: usize, n: u64) -> Vec<Vec<Candidate>> {
    (0..m)
        .map(|node| {
            (0..n)
                .map(|i| Candidate {
                    global_index: node as u64 * n + i,
                    // small integer priorities force ties
                    weight: rng.below(20) as f64,
                    timestamp: HybridTimestamp::new(rng.below(50), node as u16),
                })
                .collect()
        })
        .collect()
}

fn run_over_tcp(
    parts: Vec<Vec<Candidate>>,
    request: SelectionRequest,
    mode: SelectionMode,
) -> Vec<(Vec<u64>, u64)> {
    let m = parts.len();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let root = listener.local_addr().unwrap();
    let mut listener = Some(listener);
    std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .enumerate()
            .map(|(rank, local)| {
                let listener = if rank == 0 { listener.take() } else { None };
                s.spawn(move || {
                    let timeout = Duration::from_secs(20);
                    let mut world = match listener {
                        Some(l) => World::tcp_root(l, m, timeout).unwrap(),
                        None => World::tcp_join(root, rank, m, timeout).unwrap(),
                    };
                    world.reset_counters();
                    let config = SelectionConfig { parallelism: 2, mode };
                    let r = select(&mut world, &local, &request, &config).unwrap();
                    (r.global_indices, world.bytes_sent())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

#[test]
fn tcp_world_agrees_on_every_strategy() {
    let mut rng = TestRng::new(7);
    for strategy in [Strategy::Uniform, Strategy::Weighted, Strategy::Fifo, Strategy::Topk] {
        let parts = random_world(&mut rng, 3, 200);
        let request = SelectionRequest::new(strategy, 32, rng.next_u64());
        let results = run_over_tcp(parts.clone(), request, SelectionMode::Centralized);
        for (r, _) in &results {
            assert_eq!(r, &results[0].0);
        }
        let flat: Vec<Candidate> = parts.concat();
        let local = select_local(&flat, &request, 1).unwrap();
        assert_eq!(results[0].0, local.global_indices);
        if strategy == Strategy::Topk {
            assert_eq!(local.global_indices, oracle_topk(&flat, 32));
        }
        if strategy == Strategy::Fifo {
            assert_eq!(local.global_indices, oracle_fifo(&flat, 32));
        }
    }
}

#[test]
fn decentralized_over_tcp_matches_oracle_and_is_cheaper() {
    let mut rng = TestRng::new(8);
    for strategy in [Strategy::Fifo, Strategy::Topk] {
        let parts = random_world(&mut rng, 4, 1000);
        let flat: Vec<Candidate> = parts.concat();
        let request = SelectionRequest::new(strategy, 10, 0);
        let central = run_over_tcp(parts.clone(), request, SelectionMode::Centralized);
        let decentral = run_over_tcp(parts, request, SelectionMode::Decentralized);
        let expected = match strategy {
            Strategy::Topk => oracle_topk(&flat, 10),
            _ => oracle_fifo(&flat, 10),
        };
        for (r, _) in central.iter().chain(&decentral) {
            assert_eq!(r, &expected);
        }
        let bytes = |v: &[(Vec<u64>, u64)]| v.iter().map(|x| x.1).sum::<u64>();
        assert!(bytes(&decentral) * 10 < bytes(&central));
    }
}

#[test]
fn empty_global_set_fails_on_every_rank() {
    let parts = vec![Vec::new(), Vec::new()];
    let mut worlds = World::local_group(2);
    let request = SelectionRequest::new(Strategy::Weighted, 4, 0);
    std::thread::scope(|s| {
        for (world, local) in worlds.iter_mut().zip(&parts) {
            s.spawn(move || {
                assert!(select(world, local, &request, &SelectionConfig::default()).is_err());
            });
        }
    });
}

#[test]
fn weighted_frequencies_follow_weights() {
    let set = WeightedIndexSet::new(vec![10, 11, 12, 13], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let sampled = weighted_sample(&set, 100_000, 42, 4).unwrap();
    let mut counts = [0u64; 4];
    for g in sampled.global_indices {
        counts[(g - 10) as usize] += 1;
    }
    assert!(chi_square(&counts, &[0.1, 0.2, 0.3, 0.4]) < CHI2_99_DF3, "{counts:?}");
}

#[test]
fn released_rows_are_never_drawn() {
    use gear::index::{LocalIndexManager, ManagerConfig};
    use gear::selection::candidates;
    use gear::{Backing, Shard, ShardOptions, TrajectorySchema};
    use std::sync::Arc;

    let shard = Arc::new(
        Shard::create(&TrajectorySchema::synthetic(8).unwrap(), 8, 0, &Backing::Private, &ShardOptions::default())
            .unwrap(),
    );
    let mut mgr = LocalIndexManager::attach(Arc::clone(&shard), 0, ManagerConfig::default()).unwrap();
    for p in 0..8 {
        let mut b = mgr.allocate().unwrap();
        mgr.commit_now(&mut b, 1.0 + p as f64).unwrap();
    }
    mgr.release(5).unwrap();
    let mut zero = mgr.allocate().unwrap();
    mgr.commit_now(&mut zero, 0.0).unwrap();
    let cands = candidates(&shard.snapshot());
    let r = select_local(&cands, &SelectionRequest::new(Strategy::Weighted, 10_000, 3), 1).unwrap();
    assert!(r.global_indices.iter().all(|&g| g != 5));
}
