use rand::seq::SliceRandom;

use super::{HiddenLabels, LabeledSet, UnlabeledSet};
use crate::error::{arg_err, Result};
use crate::netcore::Matrix;
use crate::rng::{stream_rng, Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch {
    pub inputs: Matrix,
    pub hidden: HiddenLabels,
}

/// Walks a pool in shuffled epochs; a fresh permutation starts whenever the
/// previous one is used up.
#[derive(Debug, Clone)]
struct EpochCursor {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl EpochCursor {
    fn new(len: usize, rng: Rng) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
            rng,
        }
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let k = (n - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + k]);
            self.pos += k;
        }
        out
    }
}

/// Infinite deterministic stream of `(labeled, unlabeled)` batch pairs.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    labeled: &'a LabeledSet,
    unlabeled: &'a UnlabeledSet,
    batch_labeled: usize,
    batch_unlabeled: usize,
    labeled_cursor: EpochCursor,
    unlabeled_cursor: EpochCursor,
}

impl<'a> BatchSampler<'a> {
    pub fn new(
        labeled: &'a LabeledSet,
        unlabeled: &'a UnlabeledSet,
        batch_labeled: usize,
        batch_unlabeled: usize,
        seed: u64,
    ) -> Result<Self> {
        if labeled.is_empty() && batch_labeled > 0 {
            return arg_err("labeled pool is empty but labeled batch size is positive");
        }
        if unlabeled.is_empty() && batch_unlabeled > 0 {
            return arg_err("unlabeled pool is empty but unlabeled batch size is positive");
        }
        Ok(Self {
            labeled,
            unlabeled,
            batch_labeled,
            batch_unlabeled,
            labeled_cursor: EpochCursor::new(
                labeled.len(),
                stream_rng(seed, Stream::LabeledBatches),
            ),
            unlabeled_cursor: EpochCursor::new(
                unlabeled.len(),
                stream_rng(seed, Stream::UnlabeledBatches),
            ),
        })
    }
}

impl Iterator for BatchSampler<'_> {
    type Item = (LabeledBatch, UnlabeledBatch);

    fn next(&mut self) -> Option<Self::Item> {
        let li = self.labeled_cursor.take(self.batch_labeled);
        let ui = self.unlabeled_cursor.take(self.batch_unlabeled);
        let labeled = LabeledBatch {
            inputs: self.labeled.inputs.select_rows(&li),
            labels: li.iter().map(|&i| self.labeled.labels[i]).collect(),
        };
        let unlabeled = UnlabeledBatch {
            inputs: self.unlabeled.inputs.select_rows(&ui),
            hidden: self.unlabeled.hidden.select(&ui),
        };
        Some((labeled, unlabeled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pools(nl: usize, nu: usize) -> (LabeledSet, UnlabeledSet) {
        let l = LabeledSet {
            inputs: Matrix::new(nl, 1, (0..nl).map(|i| i as f64).collect()).unwrap(),
            labels: (0..nl).map(|i| i % 2).collect(),
        };
        let u = UnlabeledSet {
            inputs: Matrix::new(nu, 1, (0..nu).map(|i| 100.0 + i as f64).collect()).unwrap(),
            hidden: HiddenLabels::new((0..nu).map(|i| i % 2).collect()),
        };
        (l, u)
    }

    #[test]
    fn batch_sizes() {
        let (l, u) = pools(20, 50);
        let (lb, ub) = BatchSampler::new(&l, &u, 8, 8, 0).unwrap().next().unwrap();
        assert_eq!(lb.inputs.rows() + ub.inputs.rows(), 16);
        assert_eq!(lb.labels.len(), 8);
        assert_eq!(ub.hidden.len(), 8);
    }

    #[test]
    fn full_pool_batches_are_permutations() {
        let (l, u) = pools(8, 30);
        let s = BatchSampler::new(&l, &u, 8, 4, 3).unwrap();
        let mut perms = Vec::new();
        for (lb, _) in s.take(5) {
            let mut v: Vec<i64> = lb.inputs.data().iter().map(|&x| x as i64).collect();
            perms.push(v.clone());
            v.sort();
            assert_eq!(v, (0..8).collect::<Vec<_>>());
        }
        assert!(perms.windows(2).any(|w| w[0] != w[1]), "epochs reshuffle");
    }

    #[test]
    fn oversized_batch_recycles() {
        let (l, u) = pools(3, 5);
        let (lb, _) = BatchSampler::new(&l, &u, 7, 0, 0).unwrap().next().unwrap();
        assert_eq!(lb.labels.len(), 7);
    }

    #[test]
    fn deterministic_stream() {
        let (l, u) = pools(10, 40);
        let a: Vec<_> = BatchSampler::new(&l, &u, 4, 6, 9).unwrap().take(100).collect();
        let b: Vec<_> = BatchSampler::new(&l, &u, 4, 6, 9).unwrap().take(100).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_labeled_pool_is_error() {
        let (l, u) = pools(0, 5);
        assert!(BatchSampler::new(&l, &u, 1, 1, 0).is_err());
        assert!(BatchSampler::new(&l, &u, 0, 1, 0).is_ok());
    }
}
