use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InteractionSet;
use crate::error::{Error, Result};

/// Redraws of a uniform negative before falling back to the explicit complement.
const MAX_REDRAWS: usize = 100;

/// `(user, positive item, sampled negative item)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainBatch {
    pub triples: Vec<Triple>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Labelled pairs: every positive with label 1 followed by its negative with label 0.
    pub fn labeled_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.triples
            .iter()
            .flat_map(|t| [(t.user, t.pos, 1.0), (t.user, t.neg, 0.0)])
    }

    /// Distinct users in first-appearance order.
    pub fn users(&self) -> Vec<usize> {
        distinct(self.triples.iter().map(|t| t.user))
    }

    /// Distinct positive items in first-appearance order.
    pub fn positive_items(&self) -> Vec<usize> {
        distinct(self.triples.iter().map(|t| t.pos))
    }
}

fn distinct(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    it.filter(|x| seen.insert(*x)).collect()
}

/// Epoch-wise batch generator with one uniform negative per observed pair.
///
/// The batches of epoch `t` depend only on the seed and `t`, so a run can
/// be resumed at any epoch.
pub struct BatchSampler<'a> {
    train: &'a InteractionSet,
    batch_size: usize,
    seed: u64,
    pairs: Vec<(usize, usize)>,
}

impl<'a> BatchSampler<'a> {
    pub fn new(train: &'a InteractionSet, batch_size: usize, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(user) =
            (0..train.num_users()).find(|&u| train.user_items(u).len() == train.num_items())
        {
            return Err(Error::NoNegative { user });
        }
        Ok(Self {
            train,
            batch_size,
            seed,
            pairs: train.pairs().collect(),
        })
    }

    /// Shuffles all training pairs and cuts them into batches.
    pub fn epoch(&self, epoch: usize) -> Vec<TrainBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut pairs = self.pairs.clone();
        pairs.shuffle(&mut rng);
        pairs
            .chunks(self.batch_size)
            .map(|chunk| TrainBatch {
                triples: chunk
                    .iter()
                    .map(|&(user, pos)| Triple {
                        user,
                        pos,
                        neg: self.negative(&mut rng, user),
                    })
                    .collect(),
            })
            .collect()
    }

    fn negative(&self, rng: &mut ChaCha8Rng, user: usize) -> usize {
        let n = self.train.num_items();
        for _ in 0..MAX_REDRAWS {
            let j = rng.gen_range(0..n);
            if !self.train.contains(user, j) {
                return j;
            }
        }
        // Dense user: draw from the explicit complement instead.
        let seen = self.train.user_items(user);
        let k = rng.gen_range(0..n - seen.len());
        nth_missing(seen, k)
    }
}

/// The `k`-th (0-based) integer not present in the sorted list `seen`.
fn nth_missing(seen: &[u32], k: usize) -> usize {
    let mut candidate = k;
    for &s in seen {
        if (s as usize) <= candidate {
            candidate += 1;
        } else {
            break;
        }
    }
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_count_follows_pair_count() {
        let train = InteractionSet::from_pairs(
            64,
            40,
            (0..64).flat_map(|u| (0..32).map(move |i| (u, i))),
        )
        .unwrap();
        assert_eq!(train.len(), 2048);
        let s = BatchSampler::new(&train, 1024, 3).unwrap();
        let batches = s.epoch(0);
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.len() == 1024));
    }

    #[test]
    fn forced_complement() {
        let train = InteractionSet::from_pairs(1, 3, [(0, 0), (0, 1)]).unwrap();
        let s = BatchSampler::new(&train, 4, 0).unwrap();
        for e in 0..50 {
            for b in s.epoch(e) {
                assert!(b.triples.iter().all(|t| t.neg == 2));
            }
        }
    }

    #[test]
    fn fallback_draw_stays_in_complement() {
        assert_eq!(nth_missing(&[0, 1, 3], 0), 2);
        assert_eq!(nth_missing(&[0, 1, 3], 1), 4);
        assert_eq!(nth_missing(&[], 5), 5);
        assert_eq!(nth_missing(&[2, 3], 2), 4);
    }

    #[test]
    fn deterministic_given_seed() {
        let train = InteractionSet::from_pairs(5, 9, [(0, 1), (1, 2), (2, 3), (3, 8), (4, 0)]).unwrap();
        let a = BatchSampler::new(&train, 2, 11).unwrap();
        let b = BatchSampler::new(&train, 2, 11).unwrap();
        for e in 0..5 {
            assert_eq!(a.epoch(e), b.epoch(e));
        }
        assert_ne!(a.epoch(0), a.epoch(1));
        assert_eq!(a.epoch(3), b.epoch(3));
    }

    #[test]
    fn triples_are_valid() {
        let train = InteractionSet::from_pairs(
            20,
            15,
            (0..20).flat_map(|u| (0..15).filter(move |i| (u * 7 + i) % 3 != 0).map(move |i| (u, i))),
        )
        .unwrap();
        let s = BatchSampler::new(&train, 17, 5).unwrap();
        for e in 0..10 {
            let batches = s.epoch(e);
            assert_eq!(batches.iter().map(TrainBatch::len).sum::<usize>(), train.len());
            for t in batches.iter().flat_map(|b| &b.triples) {
                assert!(train.contains(t.user, t.pos));
                assert!(!train.contains(t.user, t.neg));
            }
        }
    }

    #[test]
    fn saturated_user_is_an_error() {
        let train = InteractionSet::from_pairs(2, 2, [(0, 0), (1, 0), (1, 1)]).unwrap();
        assert!(matches!(BatchSampler::new(&train, 4, 0), Err(Error::NoNegative { user: 1 })));
    }
}
