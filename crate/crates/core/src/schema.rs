//! Trajectory schema: named, fixed-shape columns.
//!
//! A schema decides the block size of every column table. One trajectory is
//! one row, i.e. one block per column.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GearError, Result};

pub const MAX_COLUMN_NAME: usize = 64;

/// Element type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    I32,
    I64,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::I64 | Dtype::F64 => 8,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Dtype::U8 => 1,
            Dtype::I32 => 2,
            Dtype::I64 => 3,
            Dtype::F32 => 4,
            Dtype::F64 => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Dtype> {
        Some(match tag {
            1 => Dtype::U8,
            2 => Dtype::I32,
            3 => Dtype::I64,
            4 => Dtype::F32,
            5 => Dtype::F64,
            _ => return None,
        })
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dtype::U8 => "u8",
            Dtype::I32 => "i32",
            Dtype::I64 => "i64",
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        };
        f.write_str(s)
    }
}

/// One field of a trajectory, stored as a flattened tensor per block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u32>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, dtype: Dtype, shape: impl Into<Vec<u32>>) -> Self {
        ColumnSpec {
            name: name.into(),
            dtype,
            shape: shape.into(),
        }
    }

    /// Payload size of one block: `product(shape) * sizeof(dtype)`.
    pub fn block_bytes(&self) -> usize {
        self.shape.iter().map(|&e| e as usize).product::<usize>() * self.dtype.size()
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.len() > MAX_COLUMN_NAME {
            return Err(GearError::Schema(format!(
                "column name must be 1..={MAX_COLUMN_NAME} bytes, got {:?}",
                self.name
            )));
        }
        if self.shape.is_empty() || self.shape.len() > u8::MAX as usize {
            return Err(GearError::Schema(format!(
                "column `{}` needs 1..=255 extents",
                self.name
            )));
        }
        if self.shape.contains(&0) {
            return Err(GearError::Schema(format!(
                "column `{}` has a zero extent",
                self.name
            )));
        }
        Ok(())
    }

    /// Canonical record: `name_len u8, name, dtype u8, ndim u8, extents u32[ndim]`.
    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.name.len() as u8);
        out.extend_from_slice(self.name.as_bytes());
        out.push(self.dtype.tag());
        out.push(self.shape.len() as u8);
        for extent in &self.shape {
            out.extend_from_slice(&extent.to_le_bytes());
        }
    }
}

/// Ordered list of columns plus a digest of their canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectorySchema {
    columns: Vec<ColumnSpec>,
    schema_hash: u64,
}

impl TrajectorySchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        if columns.is_empty() {
            return Err(GearError::Schema("schema needs at least one column".into()));
        }
        if columns.len() > u16::MAX as usize {
            return Err(GearError::Schema("too many columns".into()));
        }
        let mut seen = HashSet::new();
        for column in &columns {
            column.validate()?;
            if !seen.insert(column.name.as_str()) {
                return Err(GearError::Schema(format!(
                    "duplicate column name `{}`",
                    column.name
                )));
            }
        }
        let schema_hash = hash_columns(&columns);
        Ok(TrajectorySchema {
            columns,
            schema_hash,
        })
    }

    /// Single `u8[block_bytes]` column named `data`.
    pub fn synthetic(block_bytes: usize) -> Result<Self> {
        let extent = u32::try_from(block_bytes)
            .map_err(|_| GearError::Schema(format!("block size {block_bytes} too large")))?;
        TrajectorySchema::new(vec![ColumnSpec::new("data", Dtype::U8, [extent])])
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn column_id(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| GearError::UnknownColumn(name.to_string()))
    }

    pub fn column_ids<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.column_id(n.as_ref())).collect()
    }

    /// Sum of block sizes across all columns.
    pub fn row_bytes(&self) -> usize {
        self.columns.iter().map(ColumnSpec::block_bytes).sum()
    }
}

pub(crate) fn hash_columns(columns: &[ColumnSpec]) -> u64 {
    let mut canonical = Vec::new();
    for column in columns {
        column.encode_into(&mut canonical);
    }
    fnv1a64(&canonical)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_continue(FNV_OFFSET, bytes)
}

pub fn fnv1a64_continue(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}
