//! Collect rows spread over a local and a remote shard into one batch.

use std::collections::HashMap;
use std::sync::Arc;

use gear::collection::{Collector, CollectorServer};
use gear::index::{LocalIndexManager, ManagerConfig};
use gear::placement::translate;
use gear::schema::{ColumnSpec, Dtype};
use gear::{Backing, Shard, ShardOptions, TrajectorySchema};

fn shard(shard_id: u64) -> gear::Result<Arc<Shard>> {
    let schema = TrajectorySchema::new(vec![
        ColumnSpec::new("col0", Dtype::U8, [4]),
        ColumnSpec::new("col1", Dtype::U8, [2]),
    ])?;
    let shard = Arc::new(Shard::create(&schema, 24, shard_id, &Backing::Private, &ShardOptions::default())?);
    let mut manager = LocalIndexManager::attach(Arc::clone(&shard), 0, ManagerConfig::default())?;
    for _ in 0..24 {
        let mut buf = manager.allocate()?;
        let g = buf.global_index() as u8;
        buf.column_mut("col0")?.fill(g);
        buf.column_mut("col1")?.fill(g.wrapping_mul(10));
        manager.commit_now(&mut buf, 1.0)?;
    }
    Ok(shard)
}

fn main() -> gear::Result<()> {
    let request = [2u64, 4, 25, 26];
    for (shard_id, route) in translate(&request, 24)? {
        println!("shard {shard_id}: local {:?}", route.local_indices);
    }

    let local = shard(0)?;
    let remote = shard(1)?;
    let server = CollectorServer::start(remote, "127.0.0.1:0")?;
    let collector = Collector::new(local, HashMap::from([(1, server.local_addr())]));
    let batch = collector.collect(&request, &["col0", "col1"])?;
    for column in &batch.columns {
        let rows: Vec<&[u8]> = (0..column.rows()).map(|r| column.row(r)).collect();
        println!("{}: {rows:?}", column.spec.name);
    }
    println!("copies {:?}, network {:?}", collector.copies(), collector.net_stats());
    Ok(())
}
