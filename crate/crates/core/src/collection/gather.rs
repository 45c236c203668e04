//! One-pass local gather from shard memory.
//!
//! Each requested column is handled by its own worker, which copies every
//! requested block exactly once from the shard region into its final row of
//! the output buffer. Rows are validated against the status table before and
//! after the copy: a row whose record was not COMMITTED, or whose epoch moved
//! while it was being copied, is reported as stale.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{GearError, Result};
use crate::schema::ColumnSpec;
use crate::shard::Shard;
use crate::status::IndexState;

/// Block copies performed on each collection path.
#[derive(Debug, Default)]
pub struct CopyCounter {
    local: AtomicU64,
    server: AtomicU64,
    client: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CopyStats {
    /// Shard region to output buffer, same process.
    pub local: u64,
    /// Shard region to socket, collector server.
    pub server: u64,
    /// Socket to output buffer, collector client.
    pub client: u64,
}

impl CopyCounter {
    pub fn snapshot(&self) -> CopyStats {
        CopyStats {
            local: self.local.load(Ordering::Relaxed),
            server: self.server.load(Ordering::Relaxed),
            client: self.client.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.local.store(0, Ordering::Relaxed);
        self.server.store(0, Ordering::Relaxed);
        self.client.store(0, Ordering::Relaxed);
    }

    pub(crate) fn add_local(&self, n: u64) {
        self.local.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_server(&self, n: u64) {
        self.server.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_client(&self, n: u64) {
        self.client.fetch_add(n, Ordering::Relaxed);
    }
}

/// Contiguous rows of one column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnBuffer {
    pub spec: ColumnSpec,
    pub data: Vec<u8>,
}

impl ColumnBuffer {
    pub fn block_bytes(&self) -> usize {
        self.spec.block_bytes()
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.block_bytes()
    }

    pub fn row(&self, r: usize) -> &[u8] {
        let b = self.block_bytes();
        &self.data[r * b..(r + 1) * b]
    }
}

/// Output rows of one column, written concurrently at disjoint positions.
#[derive(Clone, Copy)]
pub(crate) struct RowSink {
    ptr: *mut u8,
    rows: usize,
    row_bytes: usize,
}

unsafe impl Send for RowSink {}
unsafe impl Sync for RowSink {}

impl RowSink {
    pub(crate) fn new(buf: &mut [u8], row_bytes: usize) -> RowSink {
        RowSink {
            ptr: buf.as_mut_ptr(),
            rows: buf.len() / row_bytes,
            row_bytes,
        }
    }

    /// # Safety
    /// No other thread may access row `r` while the slice is alive.
    pub(crate) unsafe fn row_mut<'a>(&self, r: usize) -> &'a mut [u8] {
        assert!(r < self.rows);
        std::slice::from_raw_parts_mut(self.ptr.add(r * self.row_bytes), self.row_bytes)
    }
}

/// Validate rows, copy `(column, local)` blocks into `sinks[c]` at `positions`,
/// validate again. Returns the epoch each row had; stale rows are reported as
/// local indices.
pub(crate) fn gather_into(
    shard: &Shard,
    locals: &[u64],
    positions: &[usize],
    column_ids: &[usize],
    sinks: &[RowSink],
    copies: &CopyCounter,
) -> Result<std::result::Result<Vec<u64>, Vec<u64>>> {
    debug_assert_eq!(locals.len(), positions.len());
    debug_assert_eq!(column_ids.len(), sinks.len());
    for &local in locals {
        if local >= shard.capacity() {
            return Err(GearError::IndexOutOfRange {
                index: local,
                capacity: shard.capacity(),
            });
        }
    }
    for &c in column_ids {
        shard.table(c)?;
    }
    let mut epochs = Vec::with_capacity(locals.len());
    let mut stale = Vec::new();
    for &local in locals {
        match shard.status_cell(local).read() {
            Some(s) if s.state == IndexState::Committed => epochs.push(s.epoch),
            _ => {
                epochs.push(u64::MAX);
                stale.push(local);
            }
        }
    }
    if !stale.is_empty() {
        stale.dedup();
        return Ok(Err(stale));
    }

    let copy_column = |column_id: usize, sink: RowSink| {
        let len = shard.layout().tables[column_id].block_bytes;
        for (&local, &pos) in locals.iter().zip(positions) {
            let src = shard.block_ptr(column_id, local).expect("validated");
            let dst = unsafe { sink.row_mut(pos) };
            debug_assert_eq!(dst.len(), len);
            unsafe { std::ptr::copy_nonoverlapping(src, dst.as_mut_ptr(), len) };
        }
        copies.add_local(locals.len() as u64);
    };
    if column_ids.len() == 1 {
        copy_column(column_ids[0], sinks[0]);
    } else {
        std::thread::scope(|s| {
            for (&c, &sink) in column_ids.iter().zip(sinks) {
                s.spawn(move || copy_column(c, sink));
            }
        });
    }

    for (&local, &before) in locals.iter().zip(&epochs) {
        if shard.status_cell(local).raw_epoch() != before {
            stale.push(local);
        }
    }
    if stale.is_empty() {
        Ok(Ok(epochs))
    } else {
        Ok(Err(stale))
    }
}

/// Gather `columns` of `locals` from `shard`, rows in request order.
pub fn gather_local<S: AsRef<str>>(
    shard: &Shard,
    locals: &[u64],
    columns: &[S],
    copies: &CopyCounter,
) -> Result<Vec<ColumnBuffer>> {
    Ok(gather_local_with_epochs(shard, locals, columns, copies)?.0)
}

/// Like [`gather_local`], also returning the epoch each row was read at.
pub fn gather_local_with_epochs<S: AsRef<str>>(
    shard: &Shard,
    locals: &[u64],
    columns: &[S],
    copies: &CopyCounter,
) -> Result<(Vec<ColumnBuffer>, Vec<u64>)> {
    if columns.is_empty() {
        return Err(GearError::InvalidArgument("no columns requested".into()));
    }
    let column_ids = shard.schema().column_ids(columns)?;
    let mut buffers: Vec<ColumnBuffer> = column_ids
        .iter()
        .map(|&c| {
            let spec = shard.schema().columns()[c].clone();
            let data = vec![0u8; locals.len() * spec.block_bytes()];
            ColumnBuffer { spec, data }
        })
        .collect();
    let sinks: Vec<RowSink> = buffers
        .iter_mut()
        .map(|b| {
            let bb = b.block_bytes();
            RowSink::new(&mut b.data, bb)
        })
        .collect();
    let positions: Vec<usize> = (0..locals.len()).collect();
    match gather_into(shard, locals, &positions, &column_ids, &sinks, copies)? {
        Ok(epochs) => Ok((buffers, epochs)),
        Err(stale) => Err(GearError::StaleIndices(
            stale.into_iter().map(|l| shard.global_index(l)).collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{LocalIndexManager, ManagerConfig};
    use crate::region::Backing;
    use crate::schema::{Dtype, TrajectorySchema};
    use crate::selection::rng::CounterRng;
    use crate::shard::ShardOptions;
    use std::sync::Arc;

    fn filled(capacity: u64) -> (Arc<Shard>, LocalIndexManager) {
        let schema = TrajectorySchema::new(vec![
            ColumnSpec::new("col0", Dtype::F32, [4]),
            ColumnSpec::new("col1", Dtype::U8, [3]),
        ])
        .unwrap();
        let shard = Arc::new(
            Shard::create(&schema, capacity, 0, &Backing::Private, &ShardOptions::default()).unwrap(),
        );
        let mut mgr = LocalIndexManager::attach(Arc::clone(&shard), 0, ManagerConfig::default()).unwrap();
        for i in 0..capacity {
            let mut b = mgr.allocate().unwrap();
            for (c, view) in b.views().into_iter().enumerate() {
                for (j, byte) in view.iter_mut().enumerate() {
                    *byte = (i as u8).wrapping_mul(31) ^ (c as u8 * 7) ^ j as u8;
                }
            }
            mgr.commit_now(&mut b, 1.0).unwrap();
        }
        (shard, mgr)
    }

    #[test]
    fn gathers_requested_rows_in_order() {
        let (shard, _mgr) = filled(24);
        let copies = CopyCounter::default();
        let out = gather_local(&shard, &[2, 4], &["col0"], &copies).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rows(), 2);
        assert_eq!(out[0].row(0), shard.block("col0", 2).unwrap());
        assert_eq!(out[0].row(1), shard.block("col0", 4).unwrap());
        assert_eq!(copies.snapshot().local, 2);
    }

    #[test]
    fn rejects_bad_requests() {
        let (shard, mut mgr) = filled(8);
        let copies = CopyCounter::default();
        let none: [&str; 0] = [];
        assert!(matches!(
            gather_local(&shard, &[1], &none, &copies),
            Err(GearError::InvalidArgument(_))
        ));
        assert!(matches!(
            gather_local(&shard, &[1], &["nope"], &copies),
            Err(GearError::UnknownColumn(_))
        ));
        assert!(gather_local(&shard, &[8], &["col0"], &copies).is_err());
        mgr.release(3).unwrap();
        match gather_local(&shard, &[1, 3, 5], &["col0", "col1"], &copies) {
            Err(GearError::StaleIndices(v)) => assert_eq!(v, vec![3]),
            other => panic!("expected stale, got {other:?}"),
        }
    }

    #[test]
    fn matches_per_block_reads() {
        let (shard, _mgr) = filled(256);
        let rng = CounterRng::new(5);
        let locals: Vec<u64> = (0..1024).map(|j| rng.u64_at(j) % 256).collect();
        let copies = CopyCounter::default();
        let out = gather_local(&shard, &locals, &["col1", "col0"], &copies).unwrap();
        for (c, name) in ["col1", "col0"].iter().enumerate() {
            let oracle: Vec<u8> = locals
                .iter()
                .flat_map(|&l| shard.block(name, l).unwrap().to_vec())
                .collect();
            assert_eq!(out[c].data, oracle);
        }
        assert_eq!(copies.snapshot().local, 2 * 1024);
    }
}
