//! Minibatch streams. Both samplers are deterministic in `(seed, epoch)`.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, GroupIndex};
use crate::seed;

/// Number of batches in one epoch over `total` samples, at least one.
pub fn batches_per_epoch(total: usize, batch_size: usize) -> usize {
    (total / batch_size.max(1)).max(1)
}

struct GroupCursor<'a> {
    members: &'a [usize],
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl GroupCursor<'_> {
    fn draw(&mut self, quota: usize, out: &mut Vec<usize>) {
        if self.members.len() < quota {
            for _ in 0..quota {
                out.push(self.members[self.rng.random_range(0..self.members.len())]);
            }
            return;
        }
        for _ in 0..quota {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.members[self.order[self.pos]]);
            self.pos += 1;
        }
    }
}

/// Yields, per batch, `quota` sample indices for every non-empty group.
///
/// Groups smaller than the quota are sampled with replacement; larger ones
/// are cycled through a fresh shuffle, reshuffling whenever exhausted.
pub struct GroupBalancedBatches<'a> {
    group_ids: Vec<usize>,
    cursors: Vec<GroupCursor<'a>>,
    quota: usize,
    remaining: usize,
}

impl<'a> GroupBalancedBatches<'a> {
    pub fn new(
        groups: &'a [Vec<usize>],
        batch_size: usize,
        seed: u64,
        epoch: u64,
        num_batches: usize,
    ) -> Result<Self, DataError> {
        let group_ids: Vec<usize> = (0..groups.len()).filter(|&g| !groups[g].is_empty()).collect();
        let n = group_ids.len();
        if n == 0 {
            return Err(DataError::NoGroups);
        }
        if batch_size == 0 || !batch_size.is_multiple_of(n) {
            let suggested = ((batch_size + n / 2) / n).max(1) * n;
            return Err(DataError::BatchNotDivisible { batch_size, groups: n, suggested });
        }
        let epoch_seed = seed::mix(seed, epoch);
        let cursors = group_ids
            .iter()
            .map(|&g| {
                let mut rng = seed::rng(seed::mix(epoch_seed, g as u64));
                let mut order: Vec<usize> = (0..groups[g].len()).collect();
                order.shuffle(&mut rng);
                GroupCursor { members: &groups[g], rng, order, pos: 0 }
            })
            .collect();
        Ok(GroupBalancedBatches { group_ids, cursors, quota: batch_size / n, remaining: num_batches })
    }

    /// Ids of the non-empty groups, in the order sub-batches are yielded.
    pub fn group_ids(&self) -> &[usize] {
        &self.group_ids
    }

    pub fn quota(&self) -> usize {
        self.quota
    }
}

impl Iterator for GroupBalancedBatches<'_> {
    type Item = Vec<Vec<usize>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let quota = self.quota;
        Some(
            self.cursors
                .iter_mut()
                .map(|c| {
                    let mut v = Vec::with_capacity(quota);
                    c.draw(quota, &mut v);
                    v
                })
                .collect(),
        )
    }
}

/// One epoch of group-balanced batches over a [`GroupIndex`].
pub fn group_balanced_batches(
    index: &GroupIndex,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<GroupBalancedBatches<'_>, DataError> {
    let n = batches_per_epoch(index.total(), batch_size);
    GroupBalancedBatches::new(index.members(), batch_size, seed, epoch, n)
}

/// Plain shuffled minibatches over `0..total`, without group balancing.
pub struct ShuffledBatches {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    remaining: usize,
}

impl ShuffledBatches {
    pub fn new(total: usize, batch_size: usize, seed: u64, epoch: u64) -> Self {
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut seed::rng(seed::mix(seed, epoch)));
        let batch_size = batch_size.max(1).min(total.max(1));
        ShuffledBatches { order, batch_size, pos: 0, remaining: batches_per_epoch(total, batch_size) }
    }
}

pub fn shuffled_batches(total: usize, batch_size: usize, seed: u64, epoch: u64) -> ShuffledBatches {
    ShuffledBatches::new(total, batch_size, seed, epoch)
}

impl Iterator for ShuffledBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 || self.order.is_empty() {
            return None;
        }
        self.remaining -= 1;
        let batch = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn groups() -> Vec<Vec<usize>> {
        vec![(0..100).collect(), vec![], (100..103).collect(), (103..143).collect(), (143..200).collect()]
    }

    #[test]
    fn quota_per_group() {
        let g = groups();
        let mut it = GroupBalancedBatches::new(&g, 64, 1, 0, 3).unwrap();
        assert_eq!(it.group_ids(), &[0, 2, 3, 4]);
        assert_eq!(it.quota(), 16);
        let b = it.next().unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|s| s.len() == 16));
        assert!(b[1].iter().all(|i| (100..103).contains(i)));
        assert_eq!(it.by_ref().count(), 2);
    }

    #[test]
    fn small_group_repeats() {
        let g = groups();
        let b = GroupBalancedBatches::new(&g, 64, 1, 0, 1).unwrap().next().unwrap();
        let mut small = b[1].clone();
        small.sort();
        small.dedup();
        assert!(small.len() <= 3);
    }

    #[test]
    fn large_group_cycles_without_repeats_within_a_pass() {
        let g = vec![(0..32).collect::<Vec<usize>>()];
        let b = GroupBalancedBatches::new(&g, 32, 5, 0, 1).unwrap().next().unwrap();
        let mut s = b[0].clone();
        s.sort();
        assert_eq!(s, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn determinism_in_seed_and_epoch() {
        let g = groups();
        let a: Vec<_> = GroupBalancedBatches::new(&g, 64, 9, 0, 4).unwrap().collect();
        let b: Vec<_> = GroupBalancedBatches::new(&g, 64, 9, 0, 4).unwrap().collect();
        let c: Vec<_> = GroupBalancedBatches::new(&g, 64, 9, 1, 4).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn indivisible_batch_suggests_nearest() {
        let g = groups();
        match GroupBalancedBatches::new(&g, 62, 0, 0, 1) {
            Err(DataError::BatchNotDivisible { groups: 4, suggested: 64, .. }) => {}
            other => panic!("{:?}", other.map(|_| ())),
        }
        assert!(matches!(GroupBalancedBatches::new(&[vec![], vec![]], 4, 0, 0, 1), Err(DataError::NoGroups)));
    }

    #[test]
    fn shuffled_batches_cover_epoch() {
        let batches: Vec<_> = ShuffledBatches::new(10, 3, 0, 0).collect();
        assert_eq!(batches.len(), 3);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 9);
    }
}
