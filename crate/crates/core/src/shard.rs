//! Columnar shard storage.
//!
//! A shard is one flat region:
//!
//! ```text
//! header | column tables (64-byte aligned blocks) | status table (32 B/index)
//!        | control block | partition records | free-queue slots
//! ```
//!
//! The header is the only part with a variable length. Everything after it
//! is derived from the header plus the partition count stored in the
//! control block, so any process can map the region by name and validate it.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{GearError, Result};
use crate::region::{region_name, Backing, Region};
use crate::schema::{hash_columns, ColumnSpec, Dtype, TrajectorySchema};
use crate::status::{
    HybridTimestamp, IndexState, IndexStatus, SnapshotEntry, StatusCell, StatusSnapshot,
    STATUS_RECORD_BYTES,
};

pub const MAGIC: u32 = 0x4745_4152;
pub const FORMAT_VERSION: u8 = 1;
pub const BLOCK_ALIGN: usize = 64;
pub const DEFAULT_MEMORY_BUDGET: u64 = 8 << 30;

const CONTROL_BYTES: usize = 64;
const PARTITION_BYTES: usize = 64;

pub(crate) fn align_up(n: usize, align: usize) -> usize {
    n.div_ceil(align) * align
}

#[derive(Debug, Clone)]
pub struct ShardOptions {
    /// Number of local index managers sharing the shard.
    pub partitions: usize,
    pub memory_budget: u64,
}

impl Default for ShardOptions {
    fn default() -> Self {
        ShardOptions {
            partitions: 1,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Fixed part of the region, validated bit-exactly on open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardHeader {
    pub magic: u32,
    pub version: u8,
    pub schema_hash: u64,
    pub capacity: u64,
    pub columns: Vec<ColumnSpec>,
    pub table_offsets: Vec<u64>,
}

impl ShardHeader {
    pub fn num_columns(&self) -> u16 {
        self.columns.len() as u16
    }

    fn encoded_len(columns: &[ColumnSpec]) -> usize {
        4 + 1 + 3 + 8 + 8 + 2
            + columns
                .iter()
                .map(|c| 1 + c.name.len() + 1 + 1 + 4 * c.shape.len() + 8)
                .sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(&self.columns));
        out.extend_from_slice(&self.magic.to_le_bytes());
        out.push(self.version);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&self.schema_hash.to_le_bytes());
        out.extend_from_slice(&self.capacity.to_le_bytes());
        out.extend_from_slice(&self.num_columns().to_le_bytes());
        for (column, offset) in self.columns.iter().zip(&self.table_offsets) {
            column.encode_into(&mut out);
            out.extend_from_slice(&offset.to_le_bytes());
        }
        out
    }

    /// Decode and validate; returns the header and its encoded length.
    pub fn decode(bytes: &[u8]) -> Result<(ShardHeader, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.u32()?;
        if magic != MAGIC {
            return Err(GearError::Header(format!("bad magic {magic:#010x}")));
        }
        let version = cur.u8()?;
        if version != FORMAT_VERSION {
            return Err(GearError::Header(format!("unsupported version {version}")));
        }
        cur.take(3)?;
        let schema_hash = cur.u64()?;
        let capacity = cur.u64()?;
        let num_columns = cur.u16()? as usize;
        let mut columns = Vec::with_capacity(num_columns);
        let mut table_offsets = Vec::with_capacity(num_columns);
        for _ in 0..num_columns {
            let name_len = cur.u8()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| GearError::Header("column name is not utf-8".into()))?
                .to_string();
            let dtype = Dtype::from_tag(cur.u8()?)
                .ok_or_else(|| GearError::Header(format!("bad dtype for `{name}`")))?;
            let ndim = cur.u8()? as usize;
            let shape = (0..ndim).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
            columns.push(ColumnSpec { name, dtype, shape });
            table_offsets.push(cur.u64()?);
        }
        let header = ShardHeader {
            magic,
            version,
            schema_hash,
            capacity,
            columns,
            table_offsets,
        };
        Ok((header, cur.pos))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| GearError::Header("truncated header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableLayout {
    pub offset: usize,
    pub block_bytes: usize,
    pub aligned_block_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub header_len: usize,
    pub tables: Vec<TableLayout>,
    pub status_offset: usize,
    pub control_offset: usize,
    pub partitions_offset: usize,
    pub slots_offset: usize,
    pub total_len: usize,
}

impl Layout {
    fn compute(columns: &[ColumnSpec], capacity: usize, partitions: usize) -> Option<Layout> {
        let header_len = ShardHeader::encoded_len(columns);
        let mut offset = align_up(header_len, BLOCK_ALIGN);
        let mut tables = Vec::with_capacity(columns.len());
        for column in columns {
            let block_bytes = column.block_bytes();
            let aligned_block_bytes = align_up(block_bytes, BLOCK_ALIGN);
            tables.push(TableLayout {
                offset,
                block_bytes,
                aligned_block_bytes,
            });
            offset = offset.checked_add(aligned_block_bytes.checked_mul(capacity)?)?;
        }
        let status_offset = align_up(offset, BLOCK_ALIGN);
        let control_offset = align_up(
            status_offset.checked_add(capacity.checked_mul(STATUS_RECORD_BYTES)?)?,
            BLOCK_ALIGN,
        );
        let partitions_offset = control_offset + CONTROL_BYTES;
        let slots_offset = align_up(
            partitions_offset.checked_add(partitions.checked_mul(PARTITION_BYTES)?)?,
            BLOCK_ALIGN,
        );
        let total_len = slots_offset.checked_add(capacity.checked_mul(8)?)?;
        Some(Layout {
            header_len,
            tables,
            status_offset,
            control_offset,
            partitions_offset,
            slots_offset,
            total_len,
        })
    }
}

/// Equal contiguous ranges partitioning `[0, capacity)`.
pub fn partition_range(capacity: u64, partitions: usize, p: usize) -> (u64, u64) {
    let parts = partitions as u64;
    let p = p as u64;
    (p * capacity / parts, (p + 1) * capacity / parts)
}

/// One machine's slice of the trajectory store.
pub struct Shard {
    region: Region,
    shard_id: u64,
    schema: TrajectorySchema,
    capacity: u64,
    layout: Layout,
    partitions: usize,
}

// Concurrent access to the region goes through atomics (status, control,
// queue) or through blocks owned by a single writer.
unsafe impl Send for Shard {}
unsafe impl Sync for Shard {}

impl std::fmt::Debug for Shard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shard")
            .field("shard_id", &self.shard_id)
            .field("capacity", &self.capacity)
            .field("columns", &self.schema.len())
            .field("region", &self.region.name())
            .finish()
    }
}

impl Shard {
    pub fn create(
        schema: &TrajectorySchema,
        capacity: u64,
        shard_id: u64,
        backing: &Backing,
        options: &ShardOptions,
    ) -> Result<Shard> {
        if capacity == 0 {
            return Err(GearError::InvalidArgument("capacity must be positive".into()));
        }
        if options.partitions == 0 || options.partitions as u64 > capacity {
            return Err(GearError::InvalidArgument(format!(
                "partitions must be in 1..={capacity}, got {}",
                options.partitions
            )));
        }
        let cap = usize::try_from(capacity)
            .map_err(|_| GearError::InvalidArgument("capacity too large".into()))?;
        let layout = Layout::compute(schema.columns(), cap, options.partitions).ok_or(
            GearError::MemoryBudget {
                requested: u64::MAX,
                budget: options.memory_budget,
            },
        )?;
        if layout.total_len as u64 > options.memory_budget {
            return Err(GearError::MemoryBudget {
                requested: layout.total_len as u64,
                budget: options.memory_budget,
            });
        }
        let region = match backing {
            Backing::Shared { cluster_id } => {
                Region::create_shared(&region_name(cluster_id, shard_id), layout.total_len)?
            }
            Backing::Private => Region::private(layout.total_len)?,
        };
        let header = ShardHeader {
            magic: MAGIC,
            version: FORMAT_VERSION,
            schema_hash: schema.schema_hash(),
            capacity,
            columns: schema.columns().to_vec(),
            table_offsets: layout.tables.iter().map(|t| t.offset as u64).collect(),
        };
        let shard = Shard {
            region,
            shard_id,
            schema: schema.clone(),
            capacity,
            layout,
            partitions: options.partitions,
        };
        // Freshly mapped memory is zero: tables zeroed, every record FREE at epoch 0.
        let encoded = header.encode();
        unsafe {
            std::ptr::copy_nonoverlapping(encoded.as_ptr(), shard.region.as_ptr(), encoded.len());
        }
        shard.control_word(0).store(0, Ordering::SeqCst);
        shard.control_word(1).store(shard_id, Ordering::SeqCst);
        shard
            .control_word(2)
            .store(options.partitions as u64, Ordering::SeqCst);
        for p in 0..options.partitions {
            let (start, end) = partition_range(capacity, options.partitions, p);
            let words = shard.partition_words(p);
            words[0].store(start, Ordering::SeqCst);
            words[1].store(end, Ordering::SeqCst);
            words[2].store(0, Ordering::SeqCst);
            words[3].store(end - start, Ordering::SeqCst);
            for local in start..end {
                shard.slot(local).store(local, Ordering::SeqCst);
            }
        }
        Ok(shard)
    }

    /// Map an existing shared region by name.
    pub fn open(region_name: &str) -> Result<Shard> {
        let region = Region::open_shared(region_name)?;
        Shard::from_region(region)
    }

    pub fn open_by_id(cluster_id: &str, shard_id: u64) -> Result<Shard> {
        Shard::open(&region_name(cluster_id, shard_id))
    }

    fn from_region(region: Region) -> Result<Shard> {
        let bytes = unsafe { std::slice::from_raw_parts(region.as_ptr(), region.len()) };
        let (header, layout, partitions) = validate_image(bytes)?;
        let schema = TrajectorySchema::new(header.columns)
            .map_err(|e| GearError::Header(e.to_string()))?;
        let shard_id = u64::from_le_bytes(
            bytes[layout.control_offset + 8..layout.control_offset + 16]
                .try_into()
                .unwrap(),
        );
        Ok(Shard {
            region,
            shard_id,
            schema,
            capacity: header.capacity,
            layout,
            partitions,
        })
    }

    pub fn shard_id(&self) -> u64 {
        self.shard_id
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn schema(&self) -> &TrajectorySchema {
        &self.schema
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn region_name(&self) -> Option<&str> {
        self.region.name()
    }

    /// Keep a shared region alive after this handle drops.
    pub fn persist(&mut self) {
        self.region.set_unlink_on_drop(false);
    }

    /// Remove the shared region when this handle drops.
    pub fn unlink_on_drop(&mut self) {
        self.region.set_unlink_on_drop(true);
    }

    pub fn header(&self) -> ShardHeader {
        ShardHeader::decode(self.bytes())
            .expect("header validated at open")
            .0
    }

    pub fn global_index(&self, local: u64) -> u64 {
        self.shard_id * self.capacity + local
    }

    /// Whole region as bytes. Concurrent writers may be active.
    pub fn bytes(&self) -> &[u8] {
        unsafe { std::slice::from_raw_parts(self.region.as_ptr(), self.region.len()) }
    }

    fn check_index(&self, local: u64) -> Result<()> {
        if local >= self.capacity {
            return Err(GearError::IndexOutOfRange {
                index: local,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    pub fn table(&self, column_id: usize) -> Result<&TableLayout> {
        self.layout
            .tables
            .get(column_id)
            .ok_or_else(|| GearError::UnknownColumn(format!("#{column_id}")))
    }

    /// Pointer to the first byte of block `(column_id, local)`.
    pub(crate) fn block_ptr(&self, column_id: usize, local: u64) -> Result<*mut u8> {
        self.check_index(local)?;
        let table = self.table(column_id)?;
        let offset = table.offset + local as usize * table.aligned_block_bytes;
        Ok(unsafe { self.region.as_ptr().add(offset) })
    }

    /// Read-only view of one block, aliasing the region.
    pub fn block(&self, column: &str, local: u64) -> Result<&[u8]> {
        let id = self.schema.column_id(column)?;
        self.block_by_id(id, local)
    }

    pub fn block_by_id(&self, column_id: usize, local: u64) -> Result<&[u8]> {
        let ptr = self.block_ptr(column_id, local)?;
        let len = self.layout.tables[column_id].block_bytes;
        Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
    }

    /// Writable view of one block. Exclusive borrow of the shard handle;
    /// shared writers go through [`crate::index::WriteBuffer`].
    pub fn block_mut(&mut self, column: &str, local: u64) -> Result<&mut [u8]> {
        let id = self.schema.column_id(column)?;
        let ptr = self.block_ptr(id, local)?;
        let len = self.layout.tables[id].block_bytes;
        Ok(unsafe { std::slice::from_raw_parts_mut(ptr, len) })
    }

    pub(crate) fn status_cell(&self, local: u64) -> StatusCell<'_> {
        debug_assert!(local < self.capacity);
        let offset = self.layout.status_offset + local as usize * STATUS_RECORD_BYTES;
        unsafe { StatusCell::from_ptr(self.region.as_ptr().add(offset)) }
    }

    pub fn status(&self, local: u64) -> Result<IndexStatus> {
        self.check_index(local)?;
        self.status_cell(local)
            .read()
            .ok_or_else(|| GearError::Protocol(format!("status of {local} is mid-update")))
    }

    fn control_word(&self, i: usize) -> &AtomicU64 {
        let offset = self.layout.control_offset + i * 8;
        unsafe { &*(self.region.as_ptr().add(offset) as *const AtomicU64) }
    }

    pub(crate) fn partition_words(&self, p: usize) -> &[AtomicU64; 8] {
        assert!(p < self.partitions);
        let offset = self.layout.partitions_offset + p * PARTITION_BYTES;
        unsafe { &*(self.region.as_ptr().add(offset) as *const [AtomicU64; 8]) }
    }

    pub(crate) fn slot(&self, i: u64) -> &AtomicU64 {
        debug_assert!(i < self.capacity);
        let offset = self.layout.slots_offset + i as usize * 8;
        unsafe { &*(self.region.as_ptr().add(offset) as *const AtomicU64) }
    }

    /// Next timestamp from the shard's node-wide logical clock.
    pub fn next_timestamp(&self, node_id: u16) -> HybridTimestamp {
        let seq = self.control_word(0).fetch_add(1, Ordering::SeqCst) + 1;
        HybridTimestamp::new(seq, node_id)
    }

    /// Selectable indices with internally consistent records.
    pub fn snapshot(&self) -> StatusSnapshot {
        let mut entries = Vec::new();
        for local in 0..self.capacity {
            if let Some(status) = self.status_cell(local).read() {
                if status.is_selectable() {
                    entries.push(SnapshotEntry {
                        local_index: local,
                        priority: status.priority,
                        timestamp: status.timestamp,
                        epoch: status.epoch,
                    });
                }
            }
        }
        StatusSnapshot {
            shard_id: self.shard_id,
            capacity: self.capacity,
            entries,
        }
    }

    /// Count of indices per state: `[free, writing, committed, evicted]`.
    pub fn state_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for local in 0..self.capacity {
            if let (Some(state), _) = self.status_cell(local).read_unchecked() {
                counts[state.tag() as usize] += 1;
            }
        }
        counts
    }

    /// Persist the region image. Refuses while any index is being written.
    pub fn checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let writing = self.state_counts()[IndexState::Writing.tag() as usize];
        if writing > 0 {
            return Err(GearError::NotQuiescent(writing));
        }
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        {
            let mut file = File::create(&tmp)?;
            file.write_all(self.bytes())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load a checkpoint into a new region.
    pub fn restore(path: impl AsRef<Path>, backing: &Backing) -> Result<Shard> {
        let mut image = Vec::new();
        File::open(path.as_ref())?.read_to_end(&mut image)?;
        let (_, layout, _) = validate_image(&image)?;
        let shard_id = u64::from_le_bytes(
            image[layout.control_offset + 8..layout.control_offset + 16]
                .try_into()
                .unwrap(),
        );
        let region = match backing {
            Backing::Shared { cluster_id } => {
                Region::create_shared(&region_name(cluster_id, shard_id), image.len())?
            }
            Backing::Private => Region::private(image.len())?,
        };
        unsafe {
            std::ptr::copy_nonoverlapping(image.as_ptr(), region.as_ptr(), image.len());
        }
        Shard::from_region(region)
    }
}

/// Validate a full region image; returns header, layout and partition count.
fn validate_image(bytes: &[u8]) -> Result<(ShardHeader, Layout, usize)> {
    let (header, header_len) = ShardHeader::decode(bytes)?;
    if header.capacity == 0 {
        return Err(GearError::Header("zero capacity".into()));
    }
    if header.columns.is_empty() {
        return Err(GearError::Header("no columns".into()));
    }
    if hash_columns(&header.columns) != header.schema_hash {
        return Err(GearError::Header("schema hash mismatch".into()));
    }
    for column in &header.columns {
        if column.block_bytes() == 0 {
            return Err(GearError::Header(format!(
                "column `{}` has zero block size",
                column.name
            )));
        }
    }
    let cap = usize::try_from(header.capacity)
        .map_err(|_| GearError::Header("capacity too large".into()))?;
    let probe = Layout::compute(&header.columns, cap, 0)
        .ok_or_else(|| GearError::Header("layout overflows".into()))?;
    if probe.header_len != header_len {
        return Err(GearError::Header("header length mismatch".into()));
    }
    for (table, &offset) in probe.tables.iter().zip(&header.table_offsets) {
        if table.offset as u64 != offset {
            return Err(GearError::Header(format!(
                "table offset {offset} does not match layout {}",
                table.offset
            )));
        }
    }
    if bytes.len() < probe.partitions_offset {
        return Err(GearError::Header("region truncated".into()));
    }
    let word = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let partitions = word(probe.control_offset + 16) as usize;
    if partitions == 0 || partitions as u64 > header.capacity {
        return Err(GearError::Header(format!("bad partition count {partitions}")));
    }
    let layout = Layout::compute(&header.columns, cap, partitions)
        .ok_or_else(|| GearError::Header("layout overflows".into()))?;
    if bytes.len() != layout.total_len {
        return Err(GearError::Header(format!(
            "region is {} bytes, layout needs {}",
            bytes.len(),
            layout.total_len
        )));
    }
    for p in 0..partitions {
        let base = layout.partitions_offset + p * PARTITION_BYTES;
        let expected = partition_range(header.capacity, partitions, p);
        if (word(base), word(base + 8)) != expected {
            return Err(GearError::Header(format!("partition {p} range mismatch")));
        }
    }
    Ok((header, layout, partitions))
}
