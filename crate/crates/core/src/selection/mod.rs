//! Trajectory selection.
//!
//! Local kernels ([`weighted_sample`], [`uniform_sample`], [`topk_local`],
//! [`fifo_local`]) run on a flat candidate list. The protocols in
//! [`select_centralized`] and [`select_decentralized`] run them across a
//! [`World`] so that every rank ends up with the same result.

mod ordered;
mod prefix;
pub mod rng;
mod sampling;

use serde::{Deserialize, Serialize};

pub use ordered::{fifo_local, fifo_order, topk_local, topk_order};
pub use prefix::{prefix_sum, SCAN_BLOCK};
pub use sampling::{
    uniform_sample, uniform_sample_distinct, weighted_sample, weighted_sample_distinct, Sampled,
    SearchStats, WeightedIndexSet,
};

use crate::error::{GearError, Result};
use crate::status::{HybridTimestamp, StatusSnapshot};
use crate::world::{Frame, World, BROADCAST_FAILED, GATHER_RECORD_BYTES, MSG_BROADCAST, MSG_GATHER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Weighted,
    Fifo,
    Topk,
}

impl Strategy {
    /// Whether every node can pre-select locally without changing the result.
    pub fn is_decentralizable(self) -> bool {
        matches!(self, Strategy::Fifo | Strategy::Topk)
    }
}

impl std::str::FromStr for Strategy {
    type Err = GearError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Strategy::Uniform),
            "weighted" => Ok(Strategy::Weighted),
            "fifo" => Ok(Strategy::Fifo),
            "topk" => Ok(Strategy::Topk),
            other => Err(GearError::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    #[default]
    Centralized,
    Decentralized,
}

impl std::str::FromStr for SelectionMode {
    type Err = GearError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centralized" => Ok(SelectionMode::Centralized),
            "decentralized" => Ok(SelectionMode::Decentralized),
            other => Err(GearError::Config(format!("unknown selection mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    /// Only meaningful for uniform and weighted sampling.
    pub with_replacement: bool,
}

impl SelectionRequest {
    pub fn new(strategy: Strategy, k: usize, seed: u64) -> Self {
        SelectionRequest {
            strategy,
            k,
            seed,
            with_replacement: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    /// Worker count of the sampling kernel.
    pub parallelism: usize,
    pub mode: SelectionMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            parallelism: 1,
            mode: SelectionMode::Centralized,
        }
    }
}

/// One selectable row as exchanged between nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub global_index: u64,
    /// Priority; the sampling weight.
    pub weight: f64,
    pub timestamp: HybridTimestamp,
}

impl Candidate {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.global_index.to_le_bytes());
        out.extend_from_slice(&self.weight.to_le_bytes());
        out.extend_from_slice(&self.timestamp.logical_seq.to_le_bytes());
        out.extend_from_slice(&self.timestamp.node_id.to_le_bytes());
    }

    fn decode(rec: &[u8]) -> Candidate {
        let u64_at = |o: usize| u64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
        Candidate {
            global_index: u64_at(0),
            weight: f64::from_bits(u64_at(8)),
            timestamp: HybridTimestamp::new(u64_at(16), u16::from_le_bytes([rec[24], rec[25]])),
        }
    }
}

/// Candidates of a snapshot, in local index order.
pub fn candidates(snapshot: &StatusSnapshot) -> Vec<Candidate> {
    snapshot
        .entries
        .iter()
        .map(|e| Candidate {
            global_index: snapshot.global_index(e),
            weight: e.priority,
            timestamp: e.timestamp,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub global_indices: Vec<u64>,
    pub strategy: Strategy,
    pub seed: u64,
}

/// Run `request` on one flat candidate list.
///
/// Candidates are put in canonical order (ascending global index, which is
/// shard id then local index) first, so the result does not depend on the
/// order they were gathered in. Zero-priority candidates are never selected.
pub fn select_local(
    candidates: &[Candidate],
    request: &SelectionRequest,
    parallelism: usize,
) -> Result<SelectionResult> {
    let (result, _) = select_local_with_stats(candidates.to_vec(), request, parallelism)?;
    Ok(result)
}

pub(crate) fn select_local_with_stats(
    mut cands: Vec<Candidate>,
    request: &SelectionRequest,
    parallelism: usize,
) -> Result<(SelectionResult, SearchStats)> {
    if request.k == 0 {
        return Err(GearError::Selection("k must be at least 1".into()));
    }
    cands.retain(|c| c.weight > 0.0);
    cands.sort_unstable_by_key(|c| c.global_index);
    let mut stats = SearchStats::default();
    let global_indices = match request.strategy {
        Strategy::Weighted | Strategy::Uniform => {
            if cands.is_empty() {
                return Err(GearError::Selection("global selectable set is empty".into()));
            }
            let set = WeightedIndexSet {
                global_indices: cands.iter().map(|c| c.global_index).collect(),
                weights: match request.strategy {
                    Strategy::Weighted => cands.iter().map(|c| c.weight).collect(),
                    _ => vec![1.0; cands.len()],
                },
            };
            let sampled = if request.with_replacement {
                weighted_sample(&set, request.k, request.seed, parallelism)?
            } else {
                weighted_sample_distinct(&set, request.k, request.seed)?
            };
            stats = sampled.stats;
            sampled.global_indices
        }
        Strategy::Topk => ordered::topk_owned(cands, request.k)
            .iter()
            .map(|c| c.global_index)
            .collect(),
        Strategy::Fifo => ordered::fifo_owned(cands, request.k)
            .iter()
            .map(|c| c.global_index)
            .collect(),
    };
    Ok((
        SelectionResult {
            global_indices,
            strategy: request.strategy,
            seed: request.seed,
        },
        stats,
    ))
}

fn gather_frame(rank: usize, cands: &[Candidate]) -> Frame {
    let mut payload = Vec::with_capacity(cands.len() * GATHER_RECORD_BYTES);
    for c in cands {
        c.encode_into(&mut payload);
    }
    Frame::new(MSG_GATHER, rank as u16, cands.len() as u32, payload)
}

fn decode_gather(frames: Vec<Frame>) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for f in frames {
        if f.msg_type != MSG_GATHER {
            return Err(GearError::protocol(format!("expected gather, got {}", f.msg_type)));
        }
        out.extend(f.payload.chunks_exact(GATHER_RECORD_BYTES).map(Candidate::decode));
    }
    Ok(out)
}

fn result_frame(result: &Result<SelectionResult>) -> Frame {
    match result {
        Ok(r) => {
            let mut payload = Vec::with_capacity(r.global_indices.len() * 8);
            for g in &r.global_indices {
                payload.extend_from_slice(&g.to_le_bytes());
            }
            Frame::new(MSG_BROADCAST, 0, r.global_indices.len() as u32, payload)
        }
        Err(_) => Frame::new(MSG_BROADCAST, 0, BROADCAST_FAILED, Vec::new()),
    }
}

fn finish(
    world: &mut World,
    central: Option<Result<SelectionResult>>,
    request: &SelectionRequest,
) -> Result<SelectionResult> {
    let frame = central.as_ref().map(result_frame);
    let received = world.broadcast(frame)?;
    if let Some(result) = central {
        return result;
    }
    if received.count == BROADCAST_FAILED {
        return Err(GearError::Selection("selection failed on the central node".into()));
    }
    Ok(SelectionResult {
        global_indices: received
            .payload
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        strategy: request.strategy,
        seed: request.seed,
    })
}

/// Gather every rank's candidates to the central rank, select there and
/// broadcast. Ranks that host no shard pass an empty list.
pub fn select_centralized(
    world: &mut World,
    local: &[Candidate],
    request: &SelectionRequest,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let gathered = world.gather(gather_frame(world.rank(), local))?;
    let central = gathered.map(|frames| {
        decode_gather(frames).and_then(|all| select_local(&all, request, config.parallelism))
    });
    finish(world, central, request)
}

/// Each rank sends only its best `k` (FIFO or TopK); the central rank merges.
pub fn select_decentralized(
    world: &mut World,
    local: &[Candidate],
    request: &SelectionRequest,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    if !request.strategy.is_decentralizable() {
        return Err(GearError::Selection(format!(
            "{:?} cannot be selected decentrally",
            request.strategy
        )));
    }
    if request.k == 0 {
        return Err(GearError::Selection("k must be at least 1".into()));
    }
    let selectable: Vec<Candidate> = local.iter().copied().filter(|c| c.weight > 0.0).collect();
    let partial = match request.strategy {
        Strategy::Topk => ordered::topk_owned(selectable, request.k),
        _ => ordered::fifo_owned(selectable, request.k),
    };
    let gathered = world.gather(gather_frame(world.rank(), &partial))?;
    let central = gathered.map(|frames| {
        decode_gather(frames).and_then(|all| select_local(&all, request, config.parallelism))
    });
    finish(world, central, request)
}

/// Dispatch on `config.mode`.
pub fn select(
    world: &mut World,
    local: &[Candidate],
    request: &SelectionRequest,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    match config.mode {
        SelectionMode::Centralized => select_centralized(world, local, request, config),
        SelectionMode::Decentralized => select_decentralized(world, local, request, config),
    }
}
