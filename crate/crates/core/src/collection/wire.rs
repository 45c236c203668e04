//! Collector wire protocol, version 1. Little-endian throughout.
//!
//! Request (`msg_type = 1`):
//! `magic u32, version u8, msg_type u8, shard_id u16, num_indices u32,
//! num_columns u16, indices u64[num_indices], column_ids u16[num_columns]`
//!
//! Response (`msg_type = 2`):
//! `magic u32, version u8, msg_type u8, status u8, num_columns u16`, then per
//! column `{column_id u16, payload_len u64, payload}` where the payload is the
//! requested blocks back to back in request order. A stale-index response
//! carries no columns and appends `num_stale u32, offending u64[num_stale]`.

use std::io::{self, Read, Write};

use crate::error::{GearError, Result};

pub const MAGIC: u32 = 0x4745_4152;
pub const PROTOCOL_VERSION: u8 = 1;
pub const MSG_COLLECT_REQUEST: u8 = 1;
pub const MSG_COLLECT_RESPONSE: u8 = 2;

pub const REQUEST_HEADER_BYTES: usize = 14;
pub const RESPONSE_HEADER_BYTES: usize = 9;
pub const COLUMN_HEADER_BYTES: usize = 10;

/// Upper bound on indices per request, to reject garbage lengths early.
pub const MAX_REQUEST_INDICES: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    BadShard = 1,
    StaleIndex = 2,
    BadColumn = 3,
}

impl Status {
    pub fn from_u8(v: u8) -> Result<Status> {
        Ok(match v {
            0 => Status::Ok,
            1 => Status::BadShard,
            2 => Status::StaleIndex,
            3 => Status::BadColumn,
            other => return Err(GearError::protocol(format!("unknown status {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectRequest {
    pub shard_id: u16,
    pub indices: Vec<u64>,
    pub column_ids: Vec<u16>,
}

impl CollectRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(REQUEST_HEADER_BYTES + self.indices.len() * 8 + self.column_ids.len() * 2);
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(PROTOCOL_VERSION);
        out.push(MSG_COLLECT_REQUEST);
        out.extend_from_slice(&self.shard_id.to_le_bytes());
        out.extend_from_slice(&(self.indices.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.column_ids.len() as u16).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for c in &self.column_ids {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Read one request; `Ok(None)` on a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<CollectRequest>> {
        let mut h = [0u8; REQUEST_HEADER_BYTES];
        if !read_exact_or_eof(r, &mut h)? {
            return Ok(None);
        }
        check_preamble(&h, MSG_COLLECT_REQUEST)?;
        let shard_id = u16::from_le_bytes([h[6], h[7]]);
        let num_indices = u32::from_le_bytes(h[8..12].try_into().unwrap());
        let num_columns = u16::from_le_bytes([h[12], h[13]]) as usize;
        if num_indices > MAX_REQUEST_INDICES {
            return Err(GearError::protocol(format!("{num_indices} indices in one request")));
        }
        let mut body = vec![0u8; num_indices as usize * 8 + num_columns * 2];
        r.read_exact(&mut body)?;
        let (idx, cols) = body.split_at(num_indices as usize * 8);
        Ok(Some(CollectRequest {
            shard_id,
            indices: idx
                .chunks_exact(8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            column_ids: cols
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect(),
        }))
    }
}

fn check_preamble(h: &[u8], msg_type: u8) -> Result<()> {
    let magic = u32::from_le_bytes(h[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(GearError::protocol(format!("bad magic {magic:#010x}")));
    }
    if h[4] != PROTOCOL_VERSION {
        return Err(GearError::protocol(format!("unsupported version {}", h[4])));
    }
    if h[5] != msg_type {
        return Err(GearError::protocol(format!(
            "expected msg_type {msg_type}, got {}",
            h[5]
        )));
    }
    Ok(())
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub fn response_header(status: Status, num_columns: u16) -> [u8; RESPONSE_HEADER_BYTES] {
    let mut h = [0u8; RESPONSE_HEADER_BYTES];
    h[0..4].copy_from_slice(&MAGIC.to_le_bytes());
    h[4] = PROTOCOL_VERSION;
    h[5] = MSG_COLLECT_RESPONSE;
    h[6] = status as u8;
    h[7..9].copy_from_slice(&num_columns.to_le_bytes());
    h
}

pub fn read_response_header(r: &mut impl Read) -> Result<(Status, u16)> {
    let mut h = [0u8; RESPONSE_HEADER_BYTES];
    r.read_exact(&mut h)?;
    check_preamble(&h, MSG_COLLECT_RESPONSE)?;
    Ok((Status::from_u8(h[6])?, u16::from_le_bytes([h[7], h[8]])))
}

pub fn column_header(column_id: u16, payload_len: u64) -> [u8; COLUMN_HEADER_BYTES] {
    let mut h = [0u8; COLUMN_HEADER_BYTES];
    h[0..2].copy_from_slice(&column_id.to_le_bytes());
    h[2..10].copy_from_slice(&payload_len.to_le_bytes());
    h
}

pub fn read_column_header(r: &mut impl Read) -> Result<(u16, u64)> {
    let mut h = [0u8; COLUMN_HEADER_BYTES];
    r.read_exact(&mut h)?;
    Ok((
        u16::from_le_bytes([h[0], h[1]]),
        u64::from_le_bytes(h[2..10].try_into().unwrap()),
    ))
}

pub fn stale_trailer(offending: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + offending.len() * 8);
    out.extend_from_slice(&(offending.len() as u32).to_le_bytes());
    for g in offending {
        out.extend_from_slice(&g.to_le_bytes());
    }
    out
}

pub fn read_stale_trailer(r: &mut impl Read) -> Result<Vec<u64>> {
    let mut n = [0u8; 4];
    r.read_exact(&mut n)?;
    let n = u32::from_le_bytes(n);
    if n > MAX_REQUEST_INDICES {
        return Err(GearError::protocol(format!("{n} stale indices")));
    }
    let mut body = vec![0u8; n as usize * 8];
    r.read_exact(&mut body)?;
    Ok(body
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Write every slice fully, batching them into vectored writes.
pub fn write_all_slices(w: &mut impl Write, slices: &[&[u8]]) -> io::Result<()> {
    const BATCH: usize = 64;
    for group in slices.chunks(BATCH) {
        let mut bufs: Vec<io::IoSlice<'_>> = group.iter().map(|s| io::IoSlice::new(s)).collect();
        let mut bufs = &mut bufs[..];
        while !bufs.is_empty() {
            match w.write_vectored(bufs) {
                Ok(0) => return Err(io::ErrorKind::WriteZero.into()),
                Ok(n) => io::IoSlice::advance_slices(&mut bufs, n),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}
