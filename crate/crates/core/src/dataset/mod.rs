//! Implicit-feedback interaction data: the binary user–item matrix, per-user
//! train/validation/test splits and negative-sampled training batches.

mod load;
mod manifest;
mod sampler;
mod split;
pub mod synthetic;

pub use load::{load_interactions, Delimiter, IdMap, LoadedInteractions};
pub use manifest::{read_manifest, write_manifest, SplitManifest};
pub use sampler::{BatchSampler, TrainBatch, Triple};
pub use split::{split_user_history, SplitDataset, SplitRatios};

use crate::error::{Error, Result};

/// Sparse binary interaction matrix stored as sorted per-user adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    adjacency: Vec<Vec<u32>>,
    len: usize,
}

impl InteractionSet {
    /// Builds a set from arbitrary `(user, item)` pairs. Duplicates are collapsed.
    pub fn from_pairs<I>(num_users: usize, num_items: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adjacency = vec![Vec::new(); num_users];
        for (u, i) in pairs {
            if u >= num_users {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    index: u,
                    size: num_users,
                });
            }
            if i >= num_items {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: i,
                    size: num_items,
                });
            }
            adjacency[u].push(i as u32);
        }
        Ok(Self::from_adjacency_unchecked(num_items, adjacency))
    }

    /// Empty matrix of the given shape.
    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            num_items,
            adjacency: vec![Vec::new(); num_users],
            len: 0,
        }
    }

    fn from_adjacency_unchecked(num_items: usize, mut adjacency: Vec<Vec<u32>>) -> Self {
        let mut len = 0;
        for items in &mut adjacency {
            items.sort_unstable();
            items.dedup();
            len += items.len();
        }
        Self {
            num_users: adjacency.len(),
            num_items,
            adjacency,
            len,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Number of observed pairs.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sorted items of user `u`. Panics if `u` is out of range.
    pub fn user_items(&self, u: usize) -> &[u32] {
        &self.adjacency[u]
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        u < self.num_users && self.adjacency[u].binary_search(&(i as u32)).is_ok()
    }

    /// All pairs in `(user, item)` lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i as usize)))
    }

    /// Transposed adjacency: for each item, the sorted users that interacted with it.
    pub fn item_users(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.num_items];
        for (u, i) in self.pairs() {
            out[i].push(u as u32);
        }
        out
    }

    /// Fraction of the matrix that is observed.
    pub fn density(&self) -> f64 {
        if self.num_users == 0 || self.num_items == 0 {
            return 0.0;
        }
        self.len as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Number of users with at least one observed item.
    pub fn active_users(&self) -> usize {
        self.adjacency.iter().filter(|items| !items.is_empty()).count()
    }

    pub(crate) fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for items in &self.adjacency {
            for &i in items {
                deg[i as usize] += 1;
            }
        }
        deg
    }
}

/// Summary line in the form used by dataset statistics tables.
pub fn stats_line(set: &InteractionSet) -> String {
    format!(
        "{} users, {} items, {} interactions, {:.3}% density",
        set.num_users(),
        set.num_items(),
        set.len(),
        set.density() * 100.0
    )
}
