use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a class queue admits new negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePolicy {
    /// Lifetime-aware smallest-weight replacement.
    #[default]
    Lasw,
    /// Plain first-in first-out, lifetimes still enforced.
    Fifo,
}

/// Snapshot of one stored negative.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueEntry {
    pub repr: Vec<f64>,
    /// Weight priority `P_W`.
    pub weight: f64,
    /// Remaining lifetime `P_T`, in queue updates.
    pub lifetime: u32,
}

#[derive(Clone, Debug)]
struct Stored {
    repr: Vec<f64>,
    weight: f64,
    expires_at: u64,
}

/// Per-class negative queue indexed both by weight and by expiry.
///
/// Lifetimes are not decremented entry by entry: each update advances a
/// clock, and an entry's remaining lifetime is `expires_at - clock`.
#[derive(Clone, Debug)]
pub struct ClassQueue {
    class_id: usize,
    capacity: usize,
    clock: u64,
    next_seq: u64,
    entries: BTreeMap<u64, Stored>,
    // Largest weight last; among equal weights the oldest (smallest seq) sorts last.
    by_weight: BTreeSet<(OrderedFloat<f64>, Reverse<u64>)>,
    by_expiry: BTreeSet<(u64, u64)>,
}

impl ClassQueue {
    pub fn new(class_id: usize, capacity: usize) -> Self {
        Self {
            class_id,
            capacity,
            clock: 0,
            next_seq: 0,
            entries: BTreeMap::new(),
            by_weight: BTreeSet::new(),
            by_expiry: BTreeSet::new(),
        }
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn max_weight(&self) -> Option<f64> {
        self.by_weight.last().map(|(w, _)| w.0)
    }

    /// Stored entries, oldest first.
    pub fn entries(&self) -> Vec<QueueEntry> {
        self.entries
            .values()
            .map(|s| QueueEntry {
                repr: s.repr.clone(),
                weight: s.weight,
                lifetime: (s.expires_at - self.clock) as u32,
            })
            .collect()
    }

    /// Stored representations, oldest first.
    pub fn reprs(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.values().map(|s| s.repr.as_slice())
    }

    /// Ages every entry by one update and drops those whose lifetime hit
    /// zero. Returns the number dropped.
    fn advance(&mut self) -> usize {
        self.clock += 1;
        let mut dropped = 0;
        while let Some(&(exp, seq)) = self.by_expiry.first() {
            if exp > self.clock {
                break;
            }
            self.remove(seq);
            dropped += 1;
        }
        dropped
    }

    fn insert(&mut self, repr: Vec<f64>, weight: f64, lifetime: u32) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let expires_at = self.clock + u64::from(lifetime);
        self.by_weight.insert((OrderedFloat(weight), Reverse(seq)));
        self.by_expiry.insert((expires_at, seq));
        self.entries.insert(seq, Stored { repr, weight, expires_at });
    }

    fn remove(&mut self, seq: u64) {
        if let Some(s) = self.entries.remove(&seq) {
            self.by_weight.remove(&(OrderedFloat(s.weight), Reverse(seq)));
            self.by_expiry.remove(&(s.expires_at, seq));
        }
    }

    fn pop_max_weight(&mut self) {
        if let Some(&(_, Reverse(seq))) = self.by_weight.last() {
            self.remove(seq);
        }
    }

    fn pop_oldest(&mut self) {
        if let Some(&seq) = self.entries.keys().next() {
            self.remove(seq);
        }
    }

    /// One lifetime-aware smallest-weight update with this class's batch
    /// candidates `(repr, weight)`.
    ///
    /// Ages and expires stored entries, refills the freed slots with the
    /// lowest-weight candidates, then lets each remaining candidate (in
    /// ascending weight) replace the heaviest stored entry if that entry
    /// outweighs it. A queue below capacity is filled unconditionally.
    pub fn lasw_step(&mut self, candidates: Vec<(Vec<f64>, f64)>, lifetime: u32) {
        self.advance();
        let mut sorted = candidates;
        // stable: equal weights keep batch order
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
        let fill = self.capacity.saturating_sub(self.len()).min(sorted.len());
        let rest = sorted.split_off(fill);
        for (repr, w) in sorted {
            self.insert(repr, w, lifetime);
        }
        for (repr, w) in rest {
            if self.max_weight().is_some_and(|m| m > w) {
                self.pop_max_weight();
                self.insert(repr, w, lifetime);
            }
        }
    }

    /// FIFO update: age and expire, then append candidates in batch order,
    /// evicting the oldest entry when full.
    pub fn fifo_step(&mut self, candidates: Vec<(Vec<f64>, f64)>, lifetime: u32) {
        self.advance();
        for (repr, w) in candidates {
            if self.is_full() {
                self.pop_oldest();
            }
            self.insert(repr, w, lifetime);
        }
    }
}

/// One empty queue per class.
pub fn new_queues(num_classes: usize, capacity: usize) -> Vec<ClassQueue> {
    (0..num_classes).map(|k| ClassQueue::new(k, capacity)).collect()
}

/// Applies one queue update for every class with the augmented mini-batch.
pub fn update_queues(
    policy: QueuePolicy,
    queues: &mut [ClassQueue],
    reprs: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    lifetime: u32,
) -> Result<()> {
    if reprs.len() != labels.len() || labels.len() != weights.len() {
        return Err(Error::Shape {
            op: "queue_update",
            lhs: vec![reprs.len(), labels.len()],
            rhs: vec![weights.len()],
        });
    }
    if lifetime == 0 {
        return Err(Error::config("queue lifetime must be at least 1"));
    }
    if let Some(&w) = weights.iter().find(|&&w| !(w > 0.0 && w < 1.0)) {
        return Err(Error::Weight(w));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= queues.len()) {
        return Err(Error::Label {
            label: y,
            classes: queues.len(),
        });
    }
    for q in queues.iter_mut() {
        let k = q.class_id();
        let candidates: Vec<(Vec<f64>, f64)> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == k)
            .map(|(i, _)| (reprs[i].clone(), weights[i]))
            .collect();
        match policy {
            QueuePolicy::Lasw => q.lasw_step(candidates, lifetime),
            QueuePolicy::Fifo => q.fifo_step(candidates, lifetime),
        }
    }
    Ok(())
}

/// `lasw_update` with the default policy.
pub fn lasw_update(
    queues: &mut [ClassQueue],
    reprs: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    lifetime: u32,
) -> Result<()> {
    update_queues(QueuePolicy::Lasw, queues, reprs, labels, weights, lifetime)
}

/// Debug dump: `class_id,P_W,P_T` per stored entry.
pub fn queues_csv(queues: &[ClassQueue]) -> String {
    let mut s = String::from("class_id,P_W,P_T\n");
    for q in queues {
        for e in q.entries() {
            s.push_str(&format!("{},{},{}\n", q.class_id(), e.weight, e.lifetime));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cands(ws: &[f64]) -> Vec<(Vec<f64>, f64)> {
        ws.iter().map(|&w| (vec![w], w)).collect()
    }

    fn pairs(q: &ClassQueue) -> Vec<(f64, u32)> {
        let mut v: Vec<_> = q.entries().iter().map(|e| (e.weight, e.lifetime)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    #[test]
    fn cold_start_fills_with_full_lifetime() {
        let mut q = ClassQueue::new(0, 4);
        q.lasw_step(cands(&[0.7, 0.2]), 3);
        assert_eq!(pairs(&q), vec![(0.2, 3), (0.7, 3)]);
    }

    #[test]
    fn no_replacement_when_batch_is_heavier() {
        let mut q = ClassQueue::new(0, 3);
        q.lasw_step(cands(&[0.1, 0.2, 0.3]), 5);
        q.lasw_step(cands(&[0.6, 0.9]), 5);
        assert_eq!(pairs(&q), vec![(0.1, 4), (0.2, 4), (0.3, 4)]);
    }

    #[test]
    fn lighter_candidates_replace_heaviest() {
        let mut q = ClassQueue::new(0, 3);
        q.lasw_step(cands(&[0.5, 0.6, 0.7]), 5);
        q.lasw_step(cands(&[0.65, 0.1, 0.8]), 5);
        // 0.1 evicts 0.7; 0.65 no longer beats the new max 0.6
        assert_eq!(pairs(&q), vec![(0.1, 5), (0.5, 4), (0.6, 4)]);
    }

    #[test]
    fn expired_slots_take_smallest_candidates() {
        let mut q = ClassQueue::new(0, 2);
        q.lasw_step(cands(&[0.1, 0.2]), 1);
        // both expire on the next update; refill with the two smallest
        q.lasw_step(cands(&[0.9, 0.4, 0.8]), 2);
        assert_eq!(pairs(&q), vec![(0.4, 2), (0.8, 2)]);
    }

    #[test]
    fn equal_weights_evict_oldest_first() {
        let mut q = ClassQueue::new(0, 2);
        q.lasw_step(vec![(vec![1.0], 0.5)], 9);
        q.lasw_step(vec![(vec![2.0], 0.5)], 9);
        q.lasw_step(vec![(vec![3.0], 0.1)], 9);
        let reprs: Vec<f64> = q.reprs().map(|r| r[0]).collect();
        assert_eq!(reprs, vec![2.0, 3.0]);
    }

    #[test]
    fn fifo_keeps_most_recent() {
        let mut q = ClassQueue::new(0, 2);
        q.fifo_step(cands(&[0.1, 0.2]), 9);
        q.fifo_step(cands(&[0.9]), 9);
        assert_eq!(pairs(&q), vec![(0.2, 8), (0.9, 9)]);
    }

    #[test]
    fn update_rejects_bad_weights_and_classes() {
        let mut qs = new_queues(2, 4);
        let r = vec![vec![0.0]];
        assert!(matches!(lasw_update(&mut qs, &r, &[0], &[1.0], 3), Err(Error::Weight(_))));
        assert!(matches!(lasw_update(&mut qs, &r, &[5], &[0.5], 3), Err(Error::Label { .. })));
        assert!(qs.iter().all(ClassQueue::is_empty));
    }

    #[test]
    fn dump_lists_every_entry() {
        let mut qs = new_queues(2, 4);
        lasw_update(&mut qs, &[vec![0.0], vec![1.0]], &[1, 0], &[0.25, 0.5], 3).unwrap();
        assert_eq!(queues_csv(&qs), "class_id,P_W,P_T\n0,0.5,3\n1,0.25,3\n");
    }

    fn batch_strategy() -> impl Strategy<Value = Vec<Vec<(usize, f64)>>> {
        proptest::collection::vec(
            proptest::collection::vec((0usize..2, 0.01f64..0.99), 0..12),
            1..12,
        )
    }

    proptest! {
        #[test]
        fn size_and_lifetime_invariants(
            batches in batch_strategy(), cap in 1usize..8, tau in 1u32..5, fifo in any::<bool>()
        ) {
            let policy = if fifo { QueuePolicy::Fifo } else { QueuePolicy::Lasw };
            let mut qs = new_queues(2, cap);
            for b in &batches {
                let labels: Vec<usize> = b.iter().map(|x| x.0).collect();
                let weights: Vec<f64> = b.iter().map(|x| x.1).collect();
                let reprs: Vec<Vec<f64>> = b.iter().map(|x| vec![x.0 as f64]).collect();
                update_queues(policy, &mut qs, &reprs, &labels, &weights, tau).unwrap();
                for q in &qs {
                    prop_assert!(q.len() <= cap);
                    for e in q.entries() {
                        prop_assert!(e.lifetime >= 1 && e.lifetime <= tau);
                        prop_assert_eq!(e.repr[0] as usize, q.class_id());
                    }
                }
            }
        }

        #[test]
        fn small_weight_replacement_never_raises_the_max(
            fill in proptest::collection::vec(0.01f64..0.99, 4),
            batch in proptest::collection::vec(0.01f64..0.99, 1..10),
        ) {
            let mut q = ClassQueue::new(0, 4);
            q.lasw_step(cands(&fill), 50);
            let before = q.max_weight().unwrap();
            prop_assume!(batch.iter().any(|&w| w < before));
            q.lasw_step(cands(&batch), 50);
            prop_assert!(q.max_weight().unwrap() <= before);
        }
    }
}
