//! Ranking snapshots and consensus generation.
//!
//! Every `period` epochs each head ranks the non-training items of every
//! user; the last few rankings are kept in a [`SnapshotQueue`]. For a user
//! and a candidate item, each head contributes
//!
//! ```text
//! R = f(rank in the latest snapshot)
//! C = f(population std of the item's ranks over the queued snapshots)
//! ```
//!
//! with `f(k) = exp(-k / T)`. The item importance is the mean of `R + C`
//! over heads (or of `R` alone in [`ConsensusMode::R`]), and the consensus
//! list is the candidates sorted by importance.

mod snapshot;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use snapshot::{read_queue, write_queue, RankSnapshot, SnapshotQueue};

/// Indices of the `cap` best-scoring items, best first, skipping `exclude`
/// (sorted ascending). Equal scores are ordered by item index.
///
/// Fails with [`Error::NonFiniteInput`] on a NaN or infinite score.
pub fn rank_items(scores: &[f64], exclude: &[u32], cap: usize) -> Result<Vec<u32>> {
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput(k));
    }
    let mut skip = exclude.iter().peekable();
    let mut cand: Vec<u32> = Vec::with_capacity(scores.len().saturating_sub(exclude.len()));
    for i in 0..scores.len() as u32 {
        while skip.next_if(|&&e| e < i).is_some() {}
        if skip.next_if_eq(&&i).is_some() {
            continue;
        }
        cand.push(i);
    }
    let order = |a: &u32, b: &u32| {
        scores[*b as usize]
            .partial_cmp(&scores[*a as usize])
            .expect("finite")
            .then(a.cmp(b))
    };
    if cap < cand.len() {
        if cap == 0 {
            return Ok(Vec::new());
        }
        cand.select_nth_unstable_by(cap - 1, order);
        cand.truncate(cap);
    }
    cand.sort_unstable_by(order);
    Ok(cand)
}

/// `exp(-k / t)`.
pub fn decay(k: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {t}")));
    }
    if !(k >= 0.0) {
        return Err(Error::Config(format!("rank must be non-negative, got {k}")));
    }
    Ok(f(k, t))
}

fn f(k: f64, t: f64) -> f64 {
    (-k / t).exp()
}

/// Population standard deviation of integer ranks, computed exactly from
/// integer sums so equal multisets give identical results.
fn rank_std(ranks: &[usize]) -> f64 {
    let n = ranks.len() as u128;
    let sum: u128 = ranks.iter().map(|&r| r as u128).sum();
    let sq: u128 = ranks.iter().map(|&r| (r as u128) * (r as u128)).sum();
    let num = n * sq - sum * sum;
    (num as f64).sqrt() / n as f64
}

/// Importance of `item` from its position in the latest snapshot of `head`.
pub fn rank_importance(snapshot: &RankSnapshot, slot: usize, user: usize, item: u32, t: f64) -> Result<f64> {
    decay(snapshot.rank(slot, user, item) as f64, t)
}

/// Importance of `item` from the stability of its rank over the queue.
pub fn consistency(queue: &SnapshotQueue, slot: usize, user: usize, item: u32, t: f64) -> Result<f64> {
    if queue.len() < 2 {
        return Err(Error::QueueNotReady {
            have: queue.len(),
            need: 2,
        });
    }
    let ranks: Vec<usize> = queue.snapshots().map(|s| s.rank(slot, user, item)).collect();
    decay(rank_std(&ranks), t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusMode {
    /// Ranking position plus consistency.
    #[default]
    RC,
    /// Ranking position only.
    R,
}

impl std::str::FromStr for ConsensusMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RC" => Ok(ConsensusMode::RC),
            "R" => Ok(ConsensusMode::R),
            other => Err(format!("unknown consensus mode {other:?} (expected RC or R)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSettings {
    pub temperature: f64,
    /// Stored list length per user.
    pub length: usize,
    pub mode: ConsensusMode,
}

impl Default for ConsensusSettings {
    fn default() -> Self {
        Self {
            temperature: 10.0,
            length: 100,
            mode: ConsensusMode::RC,
        }
    }
}

/// Per-user item lists ordered by decreasing importance.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusList {
    epoch: usize,
    items: Vec<Vec<u32>>,
    importance: Vec<Vec<f64>>,
}

impl ConsensusList {
    /// Lists built elsewhere. Each user's items must be distinct and carry
    /// finite, non-increasing importance.
    pub fn new(epoch: usize, items: Vec<Vec<u32>>, importance: Vec<Vec<f64>>) -> Result<Self> {
        if items.len() != importance.len() {
            return Err(Error::Shape(format!(
                "{} item lists for {} importance lists",
                items.len(),
                importance.len()
            )));
        }
        for (u, (list, imp)) in items.iter().zip(&importance).enumerate() {
            if list.len() != imp.len() {
                return Err(Error::Shape(format!("user {u}: {} items, {} weights", list.len(), imp.len())));
            }
            let mut seen = list.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != list.len() {
                return Err(Error::Config(format!("user {u}: consensus items repeat")));
            }
            if let Some(k) = imp.iter().position(|w| !w.is_finite()) {
                return Err(Error::NonFiniteInput(k));
            }
            if imp.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::Config(format!("user {u}: importance must be non-increasing")));
            }
        }
        Ok(Self {
            epoch,
            items,
            importance,
        })
    }

    /// Epoch of the latest snapshot the lists were generated from.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn num_users(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self, user: usize) -> Option<&[u32]> {
        self.items.get(user).map(Vec::as_slice)
    }

    pub fn importance(&self, user: usize) -> Option<&[f64]> {
        self.importance.get(user).map(Vec::as_slice)
    }

    /// CSV with header `epoch,user,position,item,importance`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,user,position,item,importance\n");
        for (u, (items, imp)) in self.items.iter().zip(&self.importance).enumerate() {
            for (pos, (i, w)) in items.iter().zip(imp).enumerate() {
                let _ = writeln!(out, "{},{u},{pos},{i},{w:.17e}", self.epoch);
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Consensus lists for every user from a full queue, over all heads in the
/// snapshots.
pub fn generate_consensus(queue: &SnapshotQueue, settings: &ConsensusSettings) -> Result<ConsensusList> {
    let t = settings.temperature;
    decay(0.0, t)?;
    if settings.length == 0 {
        return Err(Error::Config("consensus length must be positive".into()));
    }
    if !queue.is_full() {
        return Err(Error::QueueNotReady {
            have: queue.len(),
            need: queue.capacity(),
        });
    }
    if settings.mode == ConsensusMode::RC && queue.len() < 2 {
        return Err(Error::QueueNotReady {
            have: queue.len(),
            need: 2,
        });
    }
    let snapshots: Vec<&RankSnapshot> = queue.snapshots().collect();
    let latest = *snapshots.last().expect("queue is full");
    let cap = latest.cap();
    let n_heads = latest.heads().len();
    let by_rank: Vec<f64> = (0..=cap).map(|k| f(k as f64, t)).collect();

    let per_user: Vec<(Vec<u32>, Vec<f64>)> = (0..latest.num_users())
        .into_par_iter()
        .map(|u| {
            let mut candidates: Vec<u32> = (0..n_heads).flat_map(|x| latest.list(x, u).iter().copied()).collect();
            candidates.sort_unstable();
            candidates.dedup();

            // ranks[(c * n_heads + x) * n_snap + s]: candidate c, head x,
            // snapshot s (oldest first)
            let n_snap = snapshots.len();
            let mut ranks = vec![cap; candidates.len() * n_heads * n_snap];
            let mut index_of = vec![u32::MAX; candidates.last().map_or(0, |&i| i as usize + 1)];
            for (c, &i) in candidates.iter().enumerate() {
                index_of[i as usize] = c as u32;
            }
            for x in 0..n_heads {
                for (s, snap) in snapshots.iter().enumerate() {
                    for (r, &i) in snap.list(x, u).iter().enumerate() {
                        match index_of.get(i as usize) {
                            Some(&c) if c != u32::MAX => ranks[(c as usize * n_heads + x) * n_snap + s] = r,
                            _ => {}
                        }
                    }
                }
            }

            let mut terms = vec![0.0; n_heads];
            let mut scored: Vec<(u32, f64)> = candidates
                .iter()
                .enumerate()
                .map(|(c, &i)| {
                    for (x, term) in terms.iter_mut().enumerate() {
                        let per_snap = &ranks[(c * n_heads + x) * n_snap..(c * n_heads + x + 1) * n_snap];
                        let r = by_rank[per_snap[n_snap - 1]];
                        *term = match settings.mode {
                            ConsensusMode::R => r,
                            ConsensusMode::RC => r + f(rank_std(per_snap), t),
                        };
                    }
                    // Summed in ascending order so the result does not depend on head order.
                    terms.sort_unstable_by(f64::total_cmp);
                    (i, terms.iter().sum::<f64>() / n_heads as f64)
                })
                .collect();
            let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
            if settings.length < scored.len() {
                scored.select_nth_unstable_by(settings.length - 1, order);
                scored.truncate(settings.length);
            }
            scored.sort_unstable_by(order);
            scored.into_iter().unzip()
        })
        .collect();

    let (items, importance) = per_user.into_iter().unzip();
    Ok(ConsensusList {
        epoch: latest.epoch(),
        items,
        importance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadId;

    #[test]
    fn rank_items_examples() {
        assert_eq!(rank_items(&[0.1, 0.9, 0.5], &[], 10).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank_items(&[0.5, 0.5], &[], 10).unwrap(), vec![0, 1]);
        assert_eq!(rank_items(&[0.1, 0.9, 0.5], &[1], 10).unwrap(), vec![2, 0]);
        assert_eq!(rank_items(&[0.1, 0.9, 0.5, 0.7], &[1], 2).unwrap(), vec![3, 2]);
        assert_eq!(rank_items(&[0.0, -0.0, 1.0], &[], 3).unwrap(), vec![2, 0, 1]);
        assert!(matches!(
            rank_items(&[0.1, f64::NAN], &[], 2),
            Err(Error::NonFiniteInput(1))
        ));
    }

    #[test]
    fn rank_items_matches_full_sort() {
        let mut state = 99u64;
        for _ in 0..200 {
            let n = 1 + (state % 40) as usize;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((state >> 60) as f64) / 4.0
                })
                .collect();
            let exclude: Vec<u32> = (0..n as u32).filter(|i| (state >> (i % 50)) & 3 == 0).collect();
            let cap = 1 + (state % 17) as usize;
            let mut all: Vec<u32> = (0..n as u32).filter(|i| !exclude.contains(i)).collect();
            all.sort_by(|&a, &b| {
                scores[b as usize]
                    .partial_cmp(&scores[a as usize])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            all.truncate(cap);
            assert_eq!(rank_items(&scores, &exclude, cap).unwrap(), all);
        }
    }

    #[test]
    fn decay_examples() {
        assert_eq!(decay(0.0, 10.0).unwrap(), 1.0);
        assert!((decay(10.0, 10.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((decay(10.0 * 2f64.ln(), 10.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((decay(300.0, 10.0).unwrap() - 9.357622968840175e-14).abs() < 1e-26);
        assert!(decay(1.0, 0.0).is_err());
        assert!(decay(1.0, -2.0).is_err());
    }

    #[test]
    fn std_of_spread_ranks() {
        assert!((rank_std(&[0, 2, 4]) - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let c = f(rank_std(&[0, 2, 4]), 10.0);
        assert!((c - 0.84933).abs() < 1e-5, "{c}");
        assert_eq!(rank_std(&[7, 7, 7]), 0.0);
    }

    fn queue_of(lists_per_snapshot: Vec<Vec<Vec<Vec<u32>>>>, heads: Vec<HeadId>, cap: usize) -> SnapshotQueue {
        let mut q = SnapshotQueue::new(lists_per_snapshot.len(), 1, cap).unwrap();
        for (e, lists) in lists_per_snapshot.into_iter().enumerate() {
            q.push(RankSnapshot::from_lists(e, cap, heads.clone(), lists).unwrap())
                .unwrap();
        }
        q
    }

    #[test]
    fn importance_components() {
        // one head, one user, item 3 at ranks 0, 2, 4; item 5 only at the top once
        let q = queue_of(
            vec![
                vec![vec![vec![3, 1, 5]]],
                vec![vec![vec![1, 2, 3]]],
                vec![vec![vec![1, 2, 0, 9, 3]]],
            ],
            vec![HeadId::A],
            300,
        );
        let latest = q.latest().unwrap();
        assert!((rank_importance(latest, 0, 0, 3, 10.0).unwrap() - (-0.4f64).exp()).abs() < 1e-15);
        let absent = rank_importance(latest, 0, 0, 7, 10.0).unwrap();
        assert!((absent - 9.36e-14).abs() < 1e-15);
        assert!((consistency(&q, 0, 0, 3, 10.0).unwrap() - 0.84933).abs() < 1e-5);
        assert_eq!(consistency(&q, 0, 0, 7, 10.0).unwrap(), 1.0);

        let single = queue_of(vec![vec![vec![vec![0]]]], vec![HeadId::A], 4);
        assert!(matches!(
            consistency(&single, 0, 0, 0, 10.0),
            Err(Error::QueueNotReady { have: 1, need: 2 })
        ));
    }

    #[test]
    fn single_head_stable_queue_reproduces_its_ranking() {
        let list = vec![4, 0, 2, 3, 1];
        let q = queue_of(vec![vec![vec![list.clone()]]; 3], vec![HeadId::C], 5);
        for mode in [ConsensusMode::RC, ConsensusMode::R] {
            let c = generate_consensus(
                &q,
                &ConsensusSettings {
                    temperature: 10.0,
                    length: 10,
                    mode,
                },
            )
            .unwrap();
            assert_eq!(c.items(0).unwrap(), list.as_slice());
            let imp = c.importance(0).unwrap();
            assert!(imp.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(imp[0], if mode == ConsensusMode::RC { 2.0 } else { 1.0 });
        }
    }

    #[test]
    fn identical_heads_give_common_list() {
        let list = vec![2, 0, 1, 3];
        let q = queue_of(
            vec![vec![vec![list.clone()], vec![list.clone()]]; 2],
            vec![HeadId::A, HeadId::E],
            4,
        );
        let c = generate_consensus(&q, &ConsensusSettings::default()).unwrap();
        assert_eq!(c.items(0).unwrap(), list.as_slice());
    }

    #[test]
    fn truncation_and_errors() {
        let q = queue_of(vec![vec![vec![vec![0, 1, 2, 3]]]; 2], vec![HeadId::A], 4);
        let c = generate_consensus(
            &q,
            &ConsensusSettings {
                length: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.items(0).unwrap(), &[0, 1]);
        assert_eq!(c.epoch(), 1);
        assert!(c.to_csv().starts_with("epoch,user,position,item,importance\n1,0,0,0,"));

        let mut partial = SnapshotQueue::new(3, 1, 4).unwrap();
        partial
            .push(RankSnapshot::from_lists(0, 4, vec![HeadId::A], vec![vec![vec![0]]]).unwrap())
            .unwrap();
        assert!(matches!(
            generate_consensus(&partial, &ConsensusSettings::default()),
            Err(Error::QueueNotReady { have: 1, need: 3 })
        ));
    }

    #[test]
    fn consistency_breaks_rank_ties() {
        // Heads disagree symmetrically on the latest ranks; item 1 was stable,
        // item 0 jumped around, so RC prefers 1 while R sees a tie.
        let q = queue_of(
            vec![
                vec![vec![vec![1, 2, 0]], vec![vec![1, 2, 0]]],
                vec![vec![vec![0, 1, 2]], vec![vec![1, 0, 2]]],
            ],
            vec![HeadId::A, HeadId::B],
            3,
        );
        let rc = generate_consensus(&q, &ConsensusSettings::default()).unwrap();
        assert_eq!(rc.items(0).unwrap()[0], 1);
        let r = generate_consensus(
            &q,
            &ConsensusSettings {
                mode: ConsensusMode::R,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.items(0).unwrap()[..2], [0, 1]);
    }
}
