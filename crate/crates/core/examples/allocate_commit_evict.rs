//! Fill a small partition past capacity and watch the oldest rows get evicted.

use std::sync::Arc;

use gear::index::{free_queue, LocalIndexManager, ManagerConfig};
use gear::{Backing, Shard, ShardOptions, TrajectorySchema};

fn main() -> gear::Result<()> {
    let shard = Arc::new(Shard::create(
        &TrajectorySchema::synthetic(8)?,
        4,
        0,
        &Backing::Private,
        &ShardOptions::default(),
    )?);
    let mut manager = LocalIndexManager::attach(Arc::clone(&shard), 0, ManagerConfig::default())?;
    for step in 0u64..7 {
        let mut buf = manager.allocate()?;
        buf.column_mut("data")?.copy_from_slice(&step.to_le_bytes());
        let index = manager.commit_now(&mut buf, 1.0)?;
        println!("step {step} -> index {index}, free queue {:?}", free_queue(&shard, 0));
    }

    // release one row explicitly; it goes to the back of the free queue
    let victim = manager.select_victim()?;
    manager.release(victim)?;
    let c = manager.counters();
    println!(
        "released {victim}: commits {} evictions {} releases {} committed {}",
        c.commits,
        c.evictions,
        c.releases,
        manager.committed_len()
    );
    Ok(())
}
