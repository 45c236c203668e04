//! Create a columnar shard, write one row through a manager and read it back.

use std::sync::Arc;

use gear::index::{LocalIndexManager, ManagerConfig};
use gear::schema::{ColumnSpec, Dtype};
use gear::{Backing, Shard, ShardOptions, TrajectorySchema};

fn main() -> gear::Result<()> {
    let schema = TrajectorySchema::new(vec![
        ColumnSpec::new("obs", Dtype::F32, [4, 4]),
        ColumnSpec::new("action", Dtype::I64, [1]),
        ColumnSpec::new("reward", Dtype::F32, [1]),
    ])?;
    let shard = Arc::new(Shard::create(&schema, 16, 0, &Backing::Private, &ShardOptions::default())?);
    println!("row bytes {}, region {} bytes", schema.row_bytes(), shard.bytes().len());

    let mut manager = LocalIndexManager::attach(Arc::clone(&shard), 0, ManagerConfig::default())?;
    let mut buf = manager.allocate()?;
    let obs: Vec<u8> = (0..16).flat_map(|i| (i as f32).to_le_bytes()).collect();
    buf.column_mut("obs")?.copy_from_slice(&obs);
    buf.column_mut("action")?.copy_from_slice(&3i64.to_le_bytes());
    buf.column_mut("reward")?.copy_from_slice(&0.5f32.to_le_bytes());
    let global = manager.commit_now(&mut buf, 1.0)?;

    let status = shard.status(global)?;
    let reward = f32::from_le_bytes(shard.block("reward", global)?.try_into().unwrap());
    println!("row {global}: {:?}, priority {}, reward {reward}", status.state, status.priority);
    Ok(())
}
