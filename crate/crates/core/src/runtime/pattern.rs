//! Deterministic synthetic payloads.
//!
//! A block's bytes are a function of `(global index, committed epoch,
//! column)`, so any reader that knows the epoch it read at can verify what it
//! got without a copy of the data.

use crate::schema::fnv1a64;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_seed(global: u64, epoch: u64, column: usize) -> u64 {
    mix(global ^ mix(epoch.wrapping_add(GAMMA)) ^ mix((column as u64).wrapping_add(GAMMA << 1)))
}

/// Fill `buf` with the pattern of one block.
pub fn fill_block(buf: &mut [u8], global: u64, epoch: u64, column: usize) {
    let mut state = stream_seed(global, epoch, column);
    let mut chunks = buf.chunks_exact_mut(8);
    for chunk in &mut chunks {
        state = state.wrapping_add(GAMMA);
        chunk.copy_from_slice(&mix(state).to_le_bytes());
    }
    let tail = chunks.into_remainder();
    if !tail.is_empty() {
        state = state.wrapping_add(GAMMA);
        let word = mix(state).to_le_bytes();
        tail.copy_from_slice(&word[..tail.len()]);
    }
}

/// Whether `buf` holds exactly the pattern [`fill_block`] would write.
pub fn block_matches(buf: &[u8], global: u64, epoch: u64, column: usize) -> bool {
    let mut state = stream_seed(global, epoch, column);
    let mut chunks = buf.chunks_exact(8);
    for chunk in &mut chunks {
        state = state.wrapping_add(GAMMA);
        if chunk != mix(state).to_le_bytes() {
            return false;
        }
    }
    let tail = chunks.remainder();
    if tail.is_empty() {
        return true;
    }
    state = state.wrapping_add(GAMMA);
    tail == &mix(state).to_le_bytes()[..tail.len()]
}

/// 64-bit FNV-1a of one block.
pub fn block_checksum(buf: &[u8]) -> u64 {
    fnv1a64(buf)
}
