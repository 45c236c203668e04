//! Offline trajectory datasets.
//!
//! File layout, little-endian:
//!
//! ```text
//! shard header (capacity = record count, table offsets zero)
//! record_count u64
//! record_count × { priority f64, one block per column in schema order }
//! ```
//!
//! The header carries the format version and the schema hash, so a dataset
//! can only be ingested into a cluster with the same schema.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{GearError, Result};
use crate::placement::place_offline;
use crate::schema::TrajectorySchema;
use crate::shard::{Shard, ShardHeader, FORMAT_VERSION, MAGIC};

use super::cluster::ClusterHandle;

/// Upper bound on buffered record bytes per ingestion batch.
const BATCH_BYTES: usize = 64 << 20;
const MAX_BATCH: usize = 1024;

fn dataset_header(schema: &TrajectorySchema, count: u64) -> ShardHeader {
    ShardHeader {
        magic: MAGIC,
        version: FORMAT_VERSION,
        schema_hash: schema.schema_hash(),
        capacity: count,
        columns: schema.columns().to_vec(),
        table_offsets: vec![0; schema.len()],
    }
}

/// Write every committed row of `shards`, oldest first, to `path`.
pub fn export_dataset(shards: &[&Shard], path: impl AsRef<Path>) -> Result<u64> {
    let schema = shards
        .first()
        .ok_or_else(|| GearError::InvalidArgument("nothing to export".into()))?
        .schema()
        .clone();
    let mut rows = Vec::new();
    for (s, shard) in shards.iter().enumerate() {
        if shard.schema().schema_hash() != schema.schema_hash() {
            return Err(GearError::Schema("shards have different schemas".into()));
        }
        for local in 0..shard.capacity() {
            let status = shard.status(local)?;
            if status.state == crate::status::IndexState::Committed {
                rows.push((status.timestamp, shard.global_index(local), s, local, status.priority));
            }
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&dataset_header(&schema, rows.len() as u64).encode())?;
    out.write_all(&(rows.len() as u64).to_le_bytes())?;
    for &(_, _, s, local, priority) in &rows {
        out.write_all(&priority.to_le_bytes())?;
        for c in 0..schema.len() {
            out.write_all(shards[s].block_by_id(c, local)?)?;
        }
    }
    out.flush()?;
    Ok(rows.len() as u64)
}

fn read_header(r: &mut impl Read) -> Result<(ShardHeader, u64)> {
    // fixed prefix, then the column records whose length depends on names and shapes
    let mut buf = vec![0u8; 26];
    r.read_exact(&mut buf)?;
    let num_columns = u16::from_le_bytes([buf[24], buf[25]]) as usize;
    for _ in 0..num_columns {
        let mut name_len = [0u8; 1];
        r.read_exact(&mut name_len)?;
        buf.push(name_len[0]);
        let start = buf.len();
        buf.resize(start + name_len[0] as usize + 2, 0);
        r.read_exact(&mut buf[start..])?;
        let ndim = *buf.last().unwrap() as usize;
        let start = buf.len();
        buf.resize(start + 4 * ndim + 8, 0);
        r.read_exact(&mut buf[start..])?;
    }
    let (header, _) = ShardHeader::decode(&buf)?;
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count);
    if count != header.capacity {
        return Err(GearError::Header(format!(
            "record count {count} disagrees with header ({})",
            header.capacity
        )));
    }
    Ok((header, count))
}

/// Load a dataset file into the cluster.
///
/// Records are read in batches; each batch is placed with
/// [`place_offline`] and written through the target node's index managers
/// (round-robin). A full shard evicts per its removal strategy.
pub fn ingest_offline(handle: &mut ClusterHandle, path: impl AsRef<Path>) -> Result<u64> {
    let mut input = BufReader::new(File::open(path)?);
    let (header, count) = read_header(&mut input)?;
    if header.schema_hash != handle.schema.schema_hash() || header.columns != handle.schema.columns() {
        return Err(GearError::Schema(format!(
            "dataset schema {:#018x} does not match cluster schema {:#018x}",
            header.schema_hash,
            handle.schema.schema_hash()
        )));
    }
    let row_bytes = handle.schema.row_bytes();
    let batch_len = (BATCH_BYTES / row_bytes.max(1)).clamp(1, MAX_BATCH);
    let block_sizes: Vec<usize> = handle.schema.columns().iter().map(|c| c.block_bytes()).collect();
    let mut next_manager = vec![0usize; handle.nodes.len()];

    let mut priorities = Vec::with_capacity(batch_len);
    let mut payloads = vec![0u8; batch_len * row_bytes];
    let mut done = 0u64;
    while done < count {
        let n = (count - done).min(batch_len as u64) as usize;
        priorities.clear();
        for r in 0..n {
            let mut p = [0u8; 8];
            input.read_exact(&mut p)?;
            priorities.push(f64::from_le_bytes(p));
            input.read_exact(&mut payloads[r * row_bytes..(r + 1) * row_bytes])?;
        }
        let placement = place_offline(&priorities, &handle.topology);
        for r in 0..n {
            let node_id = placement[r] as usize;
            let node = &mut handle.nodes[node_id];
            let m = next_manager[node_id];
            next_manager[node_id] = (m + 1) % node.managers.len();
            let manager = &mut node.managers[m];
            let mut buf = manager.allocate()?;
            let mut offset = r * row_bytes;
            for (view, &len) in buf.views().into_iter().zip(&block_sizes) {
                view.copy_from_slice(&payloads[offset..offset + len]);
                offset += len;
            }
            manager.commit_now(&mut buf, priorities[r])?;
        }
        done += n as u64;
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{launch_cluster, ClusterConfig};

    fn config(capacity: u64) -> ClusterConfig {
        ClusterConfig {
            capacity,
            block_bytes: 24,
            ..ClusterConfig::default()
        }
    }

    #[test]
    fn export_then_ingest_is_identical() {
        let mut src = launch_cluster(&config(24)).unwrap();
        for i in 0..10 {
            super::super::cluster::write_synthetic(&mut src.nodes[0].managers[0], i as f64).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        assert_eq!(export_dataset(&[&src.nodes[0].shard], &path).unwrap(), 10);

        let mut dst = launch_cluster(&config(24)).unwrap();
        assert_eq!(ingest_offline(&mut dst, &path).unwrap(), 10);
        let (a, b) = (&src.nodes[0].shard, &dst.nodes[0].shard);
        assert_eq!(b.state_counts()[2], 10);
        for local in 0..24 {
            assert_eq!(a.block_by_id(0, local).unwrap(), b.block_by_id(0, local).unwrap());
            let (sa, sb) = (a.status(local).unwrap(), b.status(local).unwrap());
            assert_eq!((sa.state, sa.priority), (sb.state, sb.priority));
        }
    }

    #[test]
    fn overflow_keeps_newest() {
        let mut src = launch_cluster(&config(30)).unwrap();
        for i in 0..30 {
            super::super::cluster::write_synthetic(&mut src.nodes[0].managers[0], 1.0 + i as f64).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        export_dataset(&[&src.nodes[0].shard], &path).unwrap();
        let mut dst = launch_cluster(&config(24)).unwrap();
        assert_eq!(ingest_offline(&mut dst, &path).unwrap(), 30);
        let shard = &dst.nodes[0].shard;
        let mut kept: Vec<f64> = (0..24).map(|l| shard.status(l).unwrap().priority).collect();
        kept.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (7..=30).map(|p| p as f64).collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let mut src = launch_cluster(&config(4)).unwrap();
        super::super::cluster::write_synthetic(&mut src.nodes[0].managers[0], 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        export_dataset(&[&src.nodes[0].shard], &path).unwrap();
        let mut other = launch_cluster(&ClusterConfig {
            capacity: 4,
            block_bytes: 32,
            ..ClusterConfig::default()
        })
        .unwrap();
        assert!(matches!(ingest_offline(&mut other, &path), Err(GearError::Schema(_))));
    }

    #[test]
    fn offline_placement_spreads_over_nodes() {
        let mut src = launch_cluster(&config(16)).unwrap();
        for i in 0..16 {
            super::super::cluster::write_synthetic(&mut src.nodes[0].managers[0], i as f64).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        export_dataset(&[&src.nodes[0].shard], &path).unwrap();
        let mut dst = launch_cluster(&ClusterConfig {
            nodes: 4,
            clients_per_node: 2,
            pipeline_groups: vec![vec![0, 1], vec![3, 2]],
            ..config(16)
        })
        .unwrap();
        ingest_offline(&mut dst, &path).unwrap();
        let per_node: Vec<usize> = dst.nodes.iter().map(|n| n.shard.state_counts()[2]).collect();
        assert_eq!(per_node, vec![4, 4, 4, 4]);
        // the highest priorities sit on the heads
        let max_on = |n: usize| {
            (0..16)
                .map(|l| dst.nodes[n].shard.status(l).unwrap())
                .filter(|s| s.state == crate::status::IndexState::Committed)
                .map(|s| s.priority)
                .fold(0.0, f64::max)
        };
        assert_eq!(max_on(0).max(max_on(3)), 15.0);
        assert!(max_on(1).max(max_on(2)) < 8.0);
    }
}
