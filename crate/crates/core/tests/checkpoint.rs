use std::sync::Arc;

use gear::index::{free_queue, LocalIndexManager, ManagerConfig};
use gear::runtime::fresh_cluster_id;
use gear::selection::{candidates, select_local, SelectionRequest, Strategy};
use gear::{Backing, GearError, Shard, ShardOptions, TrajectorySchema};

fn busy_shard() -> (Arc<Shard>, Vec<LocalIndexManager>) {
    let shard = Arc::new(
        Shard::create(
            &TrajectorySchema::synthetic(48).unwrap(),
            30,
            3,
            &Backing::Private,
            &ShardOptions {
                partitions: 3,
                ..ShardOptions::default()
            },
        )
        .unwrap(),
    );
    let mut mgrs: Vec<_> = (0..3)
        .map(|p| LocalIndexManager::attach(Arc::clone(&shard), p, ManagerConfig::default()).unwrap())
        .collect();
    for round in 0..25u64 {
        let m = &mut mgrs[(round % 3) as usize];
        let mut b = m.allocate().unwrap();
        b.column_mut("data").unwrap().fill(round as u8 + 1);
        m.commit_now(&mut b, 1.0 + (round % 7) as f64).unwrap();
        if round % 4 == 3 {
            let victim = m.select_victim().unwrap();
            m.release(victim).unwrap();
        }
    }
    (shard, mgrs)
}

#[test]
fn restore_is_byte_identical_and_resumes() {
    let (shard, mut mgrs) = busy_shard();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shard.ckpt");
    shard.checkpoint(&path).unwrap();
    let image = shard.bytes().to_vec();
    let queues: Vec<_> = (0..3).map(|p| free_queue(&shard, p)).collect();

    let mut continuations = Vec::new();
    for backing in [
        Backing::Private,
        Backing::Shared {
            cluster_id: fresh_cluster_id(),
        },
    ] {
        let restored = Arc::new(Shard::restore(&path, &backing).unwrap());
        assert!(restored.bytes() == &image[..], "restored image differs");
        assert_eq!(restored.shard_id(), 3);
        for (p, queue) in queues.iter().enumerate() {
            assert_eq!(&free_queue(&restored, p), queue);
        }
        for strategy in [Strategy::Uniform, Strategy::Weighted, Strategy::Fifo, Strategy::Topk] {
            let req = SelectionRequest::new(strategy, 16, 99);
            let a = select_local(&candidates(&shard.snapshot()), &req, 1).unwrap();
            let b = select_local(&candidates(&restored.snapshot()), &req, 4).unwrap();
            assert_eq!(a, b);
        }
        let mut rmgrs: Vec<_> = (0..3)
            .map(|p| LocalIndexManager::attach(Arc::clone(&restored), p, ManagerConfig::default()).unwrap())
            .collect();
        let next: Vec<u64> = rmgrs
            .iter_mut()
            .map(|m| {
                let b = m.allocate().unwrap();
                let i = b.local_index();
                m.abort(b).unwrap();
                i
            })
            .collect();
        continuations.push(next);
    }
    // the original continues exactly like its restored copies
    let next: Vec<u64> = mgrs
        .iter_mut()
        .map(|m| {
            let b = m.allocate().unwrap();
            let i = b.local_index();
            m.abort(b).unwrap();
            i
        })
        .collect();
    for c in continuations {
        assert_eq!(c, next);
    }
}

#[test]
fn checkpoint_requires_quiescence() {
    let (shard, mut mgrs) = busy_shard();
    let held = mgrs[0].allocate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shard.ckpt");
    assert!(matches!(shard.checkpoint(&path), Err(GearError::NotQuiescent(1))));
    mgrs[0].abort(held).unwrap();
    shard.checkpoint(&path).unwrap();
}

#[test]
fn corrupt_images_are_rejected() {
    let (shard, _mgrs) = busy_shard();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shard.ckpt");
    shard.checkpoint(&path).unwrap();
    let image = std::fs::read(&path).unwrap();

    let truncated = dir.path().join("short.ckpt");
    std::fs::write(&truncated, &image[..image.len() - 1]).unwrap();
    assert!(Shard::restore(&truncated, &Backing::Private).is_err());

    let mut bad_magic = image.clone();
    bad_magic[0] ^= 0xff;
    let p = dir.path().join("magic.ckpt");
    std::fs::write(&p, &bad_magic).unwrap();
    assert!(matches!(Shard::restore(&p, &Backing::Private), Err(GearError::Header(_))));

    let mut bad_hash = image;
    bad_hash[8] ^= 1;
    let p = dir.path().join("hash.ckpt");
    std::fs::write(&p, &bad_hash).unwrap();
    assert!(Shard::restore(&p, &Backing::Private).is_err());
}
