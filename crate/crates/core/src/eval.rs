//! Ranking metrics and complementarity analysis of hit sets.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{rank_items, ConsensusList};
use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::model::{FullScorer, HeadId, ModelParams};

const USER_CHUNK: usize = 256;

/// Fraction of `test` (sorted) found in `top`. `None` when `test` is empty.
pub fn recall_at_n(top: &[u32], test: &[u32]) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let hits = top.iter().filter(|i| test.binary_search(i).is_ok()).count();
    Some(hits as f64 / test.len() as f64)
}

/// NDCG of the first `n` entries of `top` against `test` (sorted), with
/// binary relevance. `None` when `test` is empty.
pub fn ndcg_at_n(top: &[u32], test: &[u32], n: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let gain = |k: usize| 1.0 / ((k + 2) as f64).log2();
    let dcg: f64 = top
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| test.binary_search(i).is_ok())
        .map(|(k, _)| gain(k))
        .sum();
    let idcg: f64 = (0..test.len().min(n)).map(gain).sum();
    Some(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// Mean recall and NDCG at one cutoff over the users that have test items.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub n: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// `lists[u]` is user `u`'s ranking, best first, at least `max(ns)` long
/// where possible.
pub fn evaluate_lists(lists: &[Vec<u32>], test: &InteractionSet, ns: &[usize]) -> Result<Vec<RankingMetrics>> {
    if lists.len() != test.num_users() {
        return Err(Error::Shape(format!(
            "{} ranking lists for {} users",
            lists.len(),
            test.num_users()
        )));
    }
    ns.iter()
        .map(|&n| {
            let (mut recall, mut ndcg, mut users) = (0.0, 0.0, 0usize);
            for (u, list) in lists.iter().enumerate() {
                let truth = test.user_items(u);
                let top = &list[..list.len().min(n)];
                if let (Some(r), Some(g)) = (recall_at_n(top, truth), ndcg_at_n(top, truth, n)) {
                    recall += r;
                    ndcg += g;
                    users += 1;
                }
            }
            if users == 0 {
                return Err(Error::EmptyDataset);
            }
            Ok(RankingMetrics {
                n,
                recall: recall / users as f64,
                ndcg: ndcg / users as f64,
                users,
            })
        })
        .collect()
}

/// Top-`n` lists of one head for every user, train positives excluded.
/// Users without items in `only_for` (when given) get an empty list.
pub fn head_rankings(
    params: &ModelParams,
    head: HeadId,
    train: &InteractionSet,
    n: usize,
    only_for: Option<&InteractionSet>,
) -> Result<Vec<Vec<u32>>> {
    let scorer = FullScorer::new(params, head)?;
    let users: Vec<usize> = (0..params.num_users())
        .filter(|&u| only_for.map_or(true, |s| !s.user_items(u).is_empty()))
        .collect();
    let ranked: Vec<(usize, Vec<u32>)> = users
        .par_chunks(USER_CHUNK)
        .map(|chunk| {
            let block = scorer.scores(chunk)?;
            chunk
                .iter()
                .zip(block.rows())
                .map(|(&u, row)| {
                    let row = row.as_slice().expect("standard layout");
                    rank_items(row, train.user_items(u), n)
                        .map(|l| (u, l))
                        .map_err(|_| Error::NonFiniteScore { head, user: u })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut lists = vec![Vec::new(); params.num_users()];
    for (u, l) in ranked {
        lists[u] = l;
    }
    Ok(lists)
}

/// Top-`n` prefix of every user's consensus list.
pub fn consensus_rankings(consensus: &ConsensusList, n: usize) -> Vec<Vec<u32>> {
    (0..consensus.num_users())
        .map(|u| {
            let items = consensus.items(u).unwrap_or(&[]);
            items[..items.len().min(n)].to_vec()
        })
        .collect()
}

/// Test items a model places in its top-K lists, pooled as `(user, item)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HitSet {
    pub tag: String,
    num_users: usize,
    hits: BTreeSet<(u32, u32)>,
}

impl HitSet {
    pub fn from_lists(tag: impl Into<String>, lists: &[Vec<u32>], test: &InteractionSet, k: usize) -> Result<Self> {
        if lists.len() != test.num_users() {
            return Err(Error::Shape(format!(
                "{} ranking lists for {} users",
                lists.len(),
                test.num_users()
            )));
        }
        let mut hits = BTreeSet::new();
        for (u, list) in lists.iter().enumerate() {
            for &i in list.iter().take(k) {
                if test.contains(u, i as usize) {
                    hits.insert((u as u32, i));
                }
            }
        }
        Ok(Self {
            tag: tag.into(),
            num_users: test.num_users(),
            hits,
        })
    }

    pub fn from_pairs(tag: impl Into<String>, num_users: usize, pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        Self {
            tag: tag.into(),
            num_users,
            hits: pairs.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.hits.contains(&(user, item))
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.hits.iter().copied()
    }

    fn user(&self, u: u32) -> impl Iterator<Item = u32> + '_ {
        self.hits.range((u, 0)..=(u, u32::MAX)).map(|&(_, i)| i)
    }
}

/// `|Hx − Hy| / |Hx|`: share of `x`'s hits that `y` misses. `None` if `x`
/// has no hits.
pub fn per(x: &HitSet, y: &HitSet) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let missed = x.hits.difference(&y.hits).count();
    Some(missed as f64 / x.len() as f64)
}

/// `|∪ Hx − Hy| / |∪ Hx|` over a family of models. `None` if the union is
/// empty.
pub fn chr(y: &HitSet, family: &[&HitSet]) -> Option<f64> {
    let union: BTreeSet<(u32, u32)> = family.iter().flat_map(|h| h.hits.iter().copied()).collect();
    if union.is_empty() {
        return None;
    }
    let missed = union.iter().filter(|p| !y.hits.contains(p)).count();
    Some(missed as f64 / union.len() as f64)
}

/// CHR of `y` computed separately for every user; users whose family union
/// is empty are skipped.
pub fn user_chr(y: &HitSet, family: &[&HitSet]) -> Vec<f64> {
    let users = family.iter().map(|h| h.num_users).chain([y.num_users]).max().unwrap_or(0);
    (0..users as u32)
        .filter_map(|u| {
            let union: BTreeSet<u32> = family.iter().flat_map(|h| h.user(u)).collect();
            if union.is_empty() {
                return None;
            }
            let missed = union.iter().filter(|&&i| !y.contains(u, i)).count();
            Some(missed as f64 / union.len() as f64)
        })
        .collect()
}

/// Empirical CDF of per-user CHR values: `(value, fraction of users ≤ value)`
/// at every distinct value.
pub fn user_chr_cdf(y: &HitSet, family: &[&HitSet]) -> Result<Vec<(f64, f64)>> {
    if family.len() < 2 {
        return Err(Error::Config("a CHR distribution needs a family of at least two models".into()));
    }
    Ok(cdf(user_chr(y, family)))
}

pub fn cdf(mut values: Vec<f64>) -> Vec<(f64, f64)> {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, v) in values.iter().enumerate() {
        let frac = (k + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    out
}

/// `PER(row; column)` for every pair of hit sets; absent values are empty cells.
pub fn per_matrix_csv(sets: &[&HitSet]) -> String {
    let mut out = String::from("model");
    for s in sets {
        let _ = write!(out, ",{}", s.tag);
    }
    out.push('\n');
    for x in sets {
        out.push_str(&x.tag);
        for y in sets {
            match per(x, y) {
                Some(v) => {
                    let _ = write!(out, ",{v:.6}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn cdf_csv(table: &[(f64, f64)]) -> String {
    let mut out = String::from("chr,cumulative_fraction\n");
    for (v, f) in table {
        let _ = writeln!(out, "{v:.6},{f:.6}");
    }
    out
}

/// Metrics of one evaluation run in the JSON output format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: Option<u64>,
    pub epoch: Option<usize>,
    pub rows: Vec<MetricRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// `R` (recall) or `N` (NDCG).
    pub metric: String,
    pub n: usize,
    /// Per head, in model order.
    pub heads: Vec<(HeadId, f64)>,
    pub consensus: Option<f64>,
}

impl MetricsReport {
    pub fn new(
        seed: Option<u64>,
        epoch: Option<usize>,
        heads: &[(HeadId, Vec<RankingMetrics>)],
        consensus: Option<&[RankingMetrics]>,
    ) -> Self {
        let ns: Vec<usize> = heads
            .first()
            .map(|(_, m)| m.iter().map(|m| m.n).collect())
            .or_else(|| consensus.map(|c| c.iter().map(|m| m.n).collect()))
            .unwrap_or_default();
        let mut rows = Vec::new();
        for (k, &n) in ns.iter().enumerate() {
            for (metric, pick) in [("R", 0), ("N", 1)] {
                let get = |m: &RankingMetrics| if pick == 0 { m.recall } else { m.ndcg };
                rows.push(MetricRow {
                    metric: metric.into(),
                    n,
                    heads: heads.iter().map(|(h, m)| (*h, get(&m[k]))).collect(),
                    consensus: consensus.map(|c| get(&c[k])),
                });
            }
        }
        Self { seed, epoch, rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,n,model,value\n");
        for row in &self.rows {
            for (h, v) in &row.heads {
                let _ = writeln!(out, "{},{},{h},{v:.6}", row.metric, row.n);
            }
            if let Some(v) = row.consensus {
                let _ = writeln!(out, "{},{},consensus,{v:.6}", row.metric, row.n);
            }
        }
        out
    }
}
