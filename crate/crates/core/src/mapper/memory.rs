//! Activation arena planning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A tensor's stay in the arena, both in timeline steps and in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    pub tensor: String,
    pub size: u64,
    pub first_step: usize,
    pub last_step: usize,
    pub start_us: f64,
    pub end_us: f64,
}

impl Lifetime {
    /// Two tensors may not share bytes if they are live in a common step or
    /// their live time windows overlap (concurrent groups on the two targets).
    pub fn conflicts(&self, other: &Lifetime) -> bool {
        let steps = self.first_step <= other.last_step && other.first_step <= self.last_step;
        let time = self.start_us < other.end_us && other.start_us < self.end_us;
        steps || time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub offset: u64,
    pub size: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryPlan {
    pub buffers: BTreeMap<String, Buffer>,
    pub arena_bytes: u64,
    /// Arena size without any reuse.
    pub total_activation_bytes: u64,
}

/// Greedy placement: largest tensor first (ties by id), each into the
/// smallest gap between already placed conflicting tensors that fits it,
/// lowest offset among equal gaps, else on top.
pub fn assign_offsets(lifetimes: &[Lifetime]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..lifetimes.len()).collect();
    order.sort_by(|&a, &b| {
        lifetimes[b]
            .size
            .cmp(&lifetimes[a].size)
            .then_with(|| lifetimes[a].tensor.cmp(&lifetimes[b].tensor))
    });
    let mut offsets: Vec<Option<u64>> = vec![None; lifetimes.len()];
    for &i in &order {
        let size = lifetimes[i].size;
        let mut busy: Vec<(u64, u64)> = (0..lifetimes.len())
            .filter_map(|j| offsets[j].filter(|_| lifetimes[i].conflicts(&lifetimes[j])).map(|o| (o, o + lifetimes[j].size)))
            .collect();
        busy.sort_unstable();
        let mut best: Option<(u64, u64)> = None; // (gap, offset)
        let mut cursor = 0;
        for &(lo, hi) in &busy {
            if lo > cursor {
                let gap = lo - cursor;
                if gap >= size && best.is_none_or(|(g, _)| gap < g) {
                    best = Some((gap, cursor));
                }
            }
            cursor = cursor.max(hi);
        }
        offsets[i] = Some(best.map_or(cursor, |(_, o)| o));
    }
    offsets.into_iter().map(Option::unwrap).collect()
}

pub fn arena_size(lifetimes: &[Lifetime], offsets: &[u64]) -> u64 {
    lifetimes.iter().zip(offsets).map(|(l, o)| o + l.size).max().unwrap_or(0)
}

/// Checks that no two conflicting tensors overlap in the arena.
pub fn overlapping_pair(lifetimes: &[Lifetime], offsets: &[u64]) -> Option<(usize, usize)> {
    for i in 0..lifetimes.len() {
        for j in i + 1..lifetimes.len() {
            let disjoint = offsets[i] + lifetimes[i].size <= offsets[j] || offsets[j] + lifetimes[j].size <= offsets[i];
            if lifetimes[i].conflicts(&lifetimes[j]) && !disjoint && lifetimes[i].size > 0 && lifetimes[j].size > 0 {
                return Some((i, j));
            }
        }
    }
    None
}

pub fn plan_offsets(lifetimes: &[Lifetime]) -> MemoryPlan {
    let offsets = assign_offsets(lifetimes);
    MemoryPlan {
        buffers: lifetimes
            .iter()
            .zip(&offsets)
            .map(|(l, &offset)| (l.tensor.clone(), Buffer { offset, size: l.size }))
            .collect(),
        arena_bytes: arena_size(lifetimes, &offsets),
        total_activation_bytes: lifetimes.iter().map(|l| l.size).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn life(tensor: &str, size: u64, first: usize, last: usize) -> Lifetime {
        Lifetime {
            tensor: tensor.into(),
            size,
            first_step: first,
            last_step: last,
            start_us: first as f64,
            end_us: last as f64 + 0.5,
        }
    }

    #[test]
    fn chain_reuses_first_slot() {
        // A -> op0 -> B -> op1 -> C
        let ls = [life("a", 100_000, 0, 0), life("b", 100_000, 0, 1), life("c", 100_000, 1, 1)];
        let plan = plan_offsets(&ls);
        assert_eq!(plan.arena_bytes, 200_000);
        assert_eq!(plan.buffers["a"].offset, plan.buffers["c"].offset);
        assert_eq!(plan.total_activation_bytes, 300_000);
    }

    #[test]
    fn short_lived_tensors_share_space() {
        let ls = [
            life("big", 300, 0, 0),
            life("x", 100, 1, 3),
            life("y", 40, 2, 2),
            life("z", 50, 3, 3),
        ];
        let offsets = assign_offsets(&ls);
        assert!(overlapping_pair(&ls, &offsets).is_none());
        assert_eq!(arena_size(&ls, &offsets), 300);
    }

    #[test]
    fn concurrent_windows_conflict() {
        let mut a = life("a", 10, 0, 0);
        let mut b = life("b", 10, 1, 1);
        assert!(!a.conflicts(&b));
        a.end_us = 3.0;
        b.start_us = 2.0;
        assert!(a.conflicts(&b));
    }
}
