//! Centralized versus decentralized TopK selection across four ranks.

use gear::selection::{select, Candidate, SelectionConfig, SelectionMode, SelectionRequest, Strategy};
use gear::{HybridTimestamp, World};

fn main() -> gear::Result<()> {
    let ranks = 4;
    let n = 10_000u64;
    let parts: Vec<Vec<Candidate>> = (0..ranks as u64)
        .map(|node| {
            (0..n)
                .map(|i| Candidate {
                    global_index: node * n + i,
                    weight: ((i * 2_654_435_761 + node) % 1000) as f64 + 1.0,
                    timestamp: HybridTimestamp::new(i, node as u16),
                })
                .collect()
        })
        .collect();
    let request = SelectionRequest::new(Strategy::Topk, 8, 0);

    for mode in [SelectionMode::Centralized, SelectionMode::Decentralized] {
        let config = SelectionConfig { parallelism: 2, mode };
        let worlds = World::local_group(ranks);
        let results: Vec<(Vec<u64>, u64)> = std::thread::scope(|s| {
            let handles: Vec<_> = worlds
                .into_iter()
                .zip(&parts)
                .map(|(mut world, local)| {
                    s.spawn(move || {
                        let r = select(&mut world, local, &request, &config).expect("selection failed");
                        (r.global_indices, world.bytes_sent())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let bytes: u64 = results.iter().map(|r| r.1).sum();
        println!("{mode:?}: {:?} ({bytes} bytes on the wire)", results[0].0);
    }
    Ok(())
}
