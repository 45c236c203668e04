//! Deterministic order-based selection (TopK by priority, FIFO by timestamp).
//!
//! Both orders are total: TopK breaks priority ties by the smaller global
//! index, FIFO orders by hybrid timestamp and then global index. Because the
//! order is total, the best `k` of a union equals the best `k` of the union
//! of each part's best `k`, which is what decentralized selection relies on.

use std::cmp::Ordering;

use super::Candidate;

pub fn topk_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(a.global_index.cmp(&b.global_index))
}

pub fn fifo_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.timestamp
        .cmp(&b.timestamp)
        .then(a.global_index.cmp(&b.global_index))
}

fn best_k(mut items: Vec<Candidate>, k: usize, order: fn(&Candidate, &Candidate) -> Ordering) -> Vec<Candidate> {
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, order);
        items.truncate(k);
    }
    items.sort_unstable_by(order);
    items
}

/// Up to `k` highest-priority candidates, best first.
pub fn topk_local(candidates: &[Candidate], k: usize) -> Vec<Candidate> {
    best_k(candidates.to_vec(), k, topk_order)
}

/// Up to `k` oldest candidates, oldest first.
pub fn fifo_local(candidates: &[Candidate], k: usize) -> Vec<Candidate> {
    best_k(candidates.to_vec(), k, fifo_order)
}

pub(crate) fn topk_owned(candidates: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    best_k(candidates, k, topk_order)
}

pub(crate) fn fifo_owned(candidates: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    best_k(candidates, k, fifo_order)
}
