use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::InteractionSet;
use crate::error::{Error, Result};

/// Train/validation/test fractions of each user's history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: InteractionSet,
    pub val: InteractionSet,
    pub test: InteractionSet,
    pub split_seed: u64,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }
}

/// Per-user random split of an interaction set.
///
/// Each user's items are shuffled with `seed` and cut into
/// `floor(val·n)` validation items, `floor(test·n)` test items and the
/// remainder for training. Users with fewer than `min_user_interactions`
/// items, and items with fewer than `min_item_interactions` users, stay in
/// train entirely. A validation/test item that would otherwise never be seen
/// in train is moved to train.
pub fn split_user_history(
    data: &InteractionSet,
    ratios: SplitRatios,
    min_user_interactions: usize,
    min_item_interactions: usize,
    seed: u64,
) -> Result<SplitDataset> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degree = data.item_degrees();

    let nu = data.num_users();
    let mut train = vec![Vec::new(); nu];
    let mut val = vec![Vec::new(); nu];
    let mut test = vec![Vec::new(); nu];

    for u in 0..nu {
        let mut items = data.user_items(u).to_vec();
        items.shuffle(&mut rng);
        let n = items.len();
        if n < min_user_interactions {
            train[u] = items;
            continue;
        }
        let n_val = (ratios.val * n as f64 + 1e-9).floor() as usize;
        let n_test = (ratios.test * n as f64 + 1e-9).floor() as usize;
        let n_train = n - n_val - n_test;
        for (k, item) in items.into_iter().enumerate() {
            let bucket = if k < n_train || degree[item as usize] < min_item_interactions {
                &mut train[u]
            } else if k < n_train + n_val {
                &mut val[u]
            } else {
                &mut test[u]
            };
            bucket.push(item);
        }
    }

    // Items that never reached train are relocated there.
    let mut in_train = vec![false; data.num_items()];
    for items in &train {
        for &i in items {
            in_train[i as usize] = true;
        }
    }
    for u in 0..nu {
        for held_out in [&mut val[u], &mut test[u]] {
            let (keep, cold): (Vec<u32>, Vec<u32>) =
                held_out.iter().partition(|&&i| in_train[i as usize]);
            *held_out = keep;
            for i in cold {
                in_train[i as usize] = true;
                train[u].push(i);
            }
        }
    }

    let build = |adj: Vec<Vec<u32>>| {
        InteractionSet::from_adjacency_unchecked(data.num_items(), adj)
    };
    Ok(SplitDataset {
        train: build(train),
        val: build(val),
        test: build(test),
        split_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;

    /// `users` users each holding every item in `0..items`.
    fn dense(users: usize, items: usize) -> InteractionSet {
        InteractionSet::from_pairs(
            users,
            items,
            (0..users).flat_map(|u| (0..items).map(move |i| (u, i))),
        )
        .unwrap()
    }

    fn counts(s: &SplitDataset, u: usize) -> (usize, usize, usize) {
        (
            s.train.user_items(u).len(),
            s.val.user_items(u).len(),
            s.test.user_items(u).len(),
        )
    }

    #[test]
    fn ten_interactions_give_six_two_two() {
        let data = dense(12, 10);
        let s = split_user_history(&data, SplitRatios::default(), 10, 10, 7).unwrap();
        for u in 0..12 {
            assert_eq!(counts(&s, u), (6, 2, 2));
        }
    }

    #[test]
    fn short_histories_stay_in_train() {
        let mut pairs: Vec<_> = (0..20).flat_map(|u| (0..10).map(move |i| (u, i))).collect();
        pairs.extend((0..9).map(|i| (20, i)));
        let data = InteractionSet::from_pairs(22, 10, pairs).unwrap();
        let s = split_user_history(&data, SplitRatios::default(), 10, 10, 1).unwrap();
        assert_eq!(counts(&s, 20), (9, 0, 0));
        assert_eq!(counts(&s, 21), (0, 0, 0));
    }

    #[test]
    fn rare_items_are_train_only() {
        // Item 10 appears once; it can never land in val/test.
        let mut pairs: Vec<_> = (0..20).flat_map(|u| (0..10).map(move |i| (u, i))).collect();
        pairs.push((0, 10));
        let data = InteractionSet::from_pairs(20, 11, pairs).unwrap();
        for seed in 0..20 {
            let s = split_user_history(&data, SplitRatios::default(), 10, 10, seed).unwrap();
            assert!(s.train.contains(0, 10));
        }
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let data = dense(2, 2);
        let bad = SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.3,
        };
        assert!(matches!(split_user_history(&data, bad, 10, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_split() {
        let data = dense(30, 25);
        let a = split_user_history(&data, SplitRatios::default(), 10, 10, 99).unwrap();
        let b = split_user_history(&data, SplitRatios::default(), 10, 10, 99).unwrap();
        assert_eq!(a, b);
        let c = split_user_history(&data, SplitRatios::default(), 10, 10, 100).unwrap();
        assert_ne!(a.val, c.val);
    }

    fn random_matrix() -> impl Strategy<Value = InteractionSet> {
        (1usize..40, 1usize..40).prop_flat_map(|(nu, ni)| {
            proptest::collection::vec((0..nu, 0..ni), 0..400)
                .prop_map(move |pairs| InteractionSet::from_pairs(nu, ni, pairs).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn split_partitions_the_source(data in random_matrix(), seed in any::<u64>(), min in 0usize..12) {
            let s = split_user_history(&data, SplitRatios::default(), min, min, seed).unwrap();
            let tr: BTreeSet<_> = s.train.pairs().collect();
            let va: BTreeSet<_> = s.val.pairs().collect();
            let te: BTreeSet<_> = s.test.pairs().collect();
            prop_assert!(tr.is_disjoint(&va));
            prop_assert!(tr.is_disjoint(&te));
            prop_assert!(va.is_disjoint(&te));
            let union: BTreeSet<_> = tr.iter().chain(&va).chain(&te).copied().collect();
            let source: BTreeSet<_> = data.pairs().collect();
            prop_assert_eq!(union, source);

            let train_users: BTreeSet<_> = tr.iter().map(|p| p.0).collect();
            let train_items: BTreeSet<_> = tr.iter().map(|p| p.1).collect();
            for (u, i) in va.iter().chain(&te) {
                prop_assert!(train_users.contains(u));
                prop_assert!(train_items.contains(i));
            }
        }
    }
}
