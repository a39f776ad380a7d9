use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use super::rank_items;
use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::model::{ByteReader, FullScorer, HeadId, ModelParams};

const USER_CHUNK: usize = 256;

/// Top-M ranking lists of every head for every user at one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct RankSnapshot {
    epoch: usize,
    cap: usize,
    heads: Vec<HeadId>,
    /// `lists[slot][user]`, best item first.
    lists: Vec<Vec<Vec<u32>>>,
}

impl RankSnapshot {
    /// Scores every user against every item with each of `heads` and keeps
    /// the top `cap` non-training items per user.
    pub fn compute(
        params: &ModelParams,
        heads: &[HeadId],
        train: &InteractionSet,
        cap: usize,
        epoch: usize,
    ) -> Result<Self> {
        check_shape(params.num_users(), params.num_items(), train)?;
        let mut lists = Vec::with_capacity(heads.len());
        for &head in heads {
            let scorer = FullScorer::new(params, head)?;
            let users: Vec<usize> = (0..params.num_users()).collect();
            let per_chunk = users
                .par_chunks(USER_CHUNK)
                .map(|chunk| {
                    let block = scorer.scores(chunk)?;
                    chunk
                        .iter()
                        .zip(block.rows())
                        .map(|(&u, row)| {
                            let row = row.as_slice().expect("standard layout");
                            rank_items(row, train.user_items(u), cap)
                                .map_err(|_| Error::NonFiniteScore { head, user: u })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            lists.push(per_chunk.into_iter().flatten().collect());
        }
        Self::from_lists(epoch, cap, heads.to_vec(), lists)
    }

    /// Builds a snapshot from explicit score matrices (`users × items`, one
    /// per head).
    pub fn from_scores(
        epoch: usize,
        cap: usize,
        heads: Vec<HeadId>,
        scores: &[Array2<f64>],
        train: &InteractionSet,
    ) -> Result<Self> {
        if scores.len() != heads.len() {
            return Err(Error::Shape(format!("{} score matrices for {} heads", scores.len(), heads.len())));
        }
        let mut lists = Vec::with_capacity(heads.len());
        for (&head, s) in heads.iter().zip(scores) {
            check_shape(s.nrows(), s.ncols(), train)?;
            let per_user = s
                .rows()
                .into_iter()
                .enumerate()
                .map(|(u, row)| {
                    rank_items(&row.to_vec(), train.user_items(u), cap)
                        .map_err(|_| Error::NonFiniteScore { head, user: u })
                })
                .collect::<Result<Vec<_>>>()?;
            lists.push(per_user);
        }
        Self::from_lists(epoch, cap, heads, lists)
    }

    /// `lists[slot][user]` must hold distinct items, at most `cap` per list.
    pub fn from_lists(epoch: usize, cap: usize, heads: Vec<HeadId>, lists: Vec<Vec<Vec<u32>>>) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Config("ranking cap must be positive".into()));
        }
        if heads.is_empty() || lists.len() != heads.len() {
            return Err(Error::Shape(format!("{} list sets for {} heads", lists.len(), heads.len())));
        }
        let users = lists[0].len();
        for per_user in &lists {
            if per_user.len() != users {
                return Err(Error::Shape("heads disagree on the number of users".into()));
            }
            for list in per_user {
                if list.len() > cap {
                    return Err(Error::Shape(format!("list of {} items exceeds cap {cap}", list.len())));
                }
            }
        }
        Ok(Self {
            epoch,
            cap,
            heads,
            lists,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn heads(&self) -> &[HeadId] {
        &self.heads
    }

    pub fn num_users(&self) -> usize {
        self.lists[0].len()
    }

    pub fn slot(&self, head: HeadId) -> Result<usize> {
        self.heads.iter().position(|&h| h == head).ok_or(Error::UnknownHead(head))
    }

    pub fn list(&self, slot: usize, user: usize) -> &[u32] {
        &self.lists[slot][user]
    }

    /// Position of `item` in the list, or the cap when absent.
    pub fn rank(&self, slot: usize, user: usize, item: u32) -> usize {
        self.lists[slot][user]
            .iter()
            .position(|&i| i == item)
            .unwrap_or(self.cap)
    }

    fn compatible(&self, other: &RankSnapshot) -> Result<()> {
        if self.heads != other.heads || self.cap != other.cap || self.num_users() != other.num_users() {
            return Err(Error::Shape(
                "snapshot heads, cap or user count differ from the queued snapshots".into(),
            ));
        }
        Ok(())
    }
}

fn check_shape(users: usize, items: usize, train: &InteractionSet) -> Result<()> {
    if users != train.num_users() || items != train.num_items() {
        return Err(Error::Shape(format!(
            "{users}x{items} scores against a {}x{} interaction set",
            train.num_users(),
            train.num_items()
        )));
    }
    Ok(())
}

/// FIFO of the most recent snapshots, taken every `period` epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotQueue {
    capacity: usize,
    period: usize,
    cap: usize,
    snapshots: VecDeque<RankSnapshot>,
}

impl SnapshotQueue {
    pub fn new(capacity: usize, period: usize, cap: usize) -> Result<Self> {
        if capacity == 0 || period == 0 || cap == 0 {
            return Err(Error::Config(format!(
                "queue capacity ({capacity}), period ({period}) and ranking cap ({cap}) must be positive"
            )));
        }
        Ok(Self {
            capacity,
            period,
            cap,
            snapshots: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.snapshots.len() == self.capacity
    }

    /// Oldest first.
    pub fn snapshots(&self) -> impl ExactSizeIterator<Item = &RankSnapshot> {
        self.snapshots.iter()
    }

    pub fn latest(&self) -> Option<&RankSnapshot> {
        self.snapshots.back()
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.epoch).collect()
    }

    /// Appends a training-time snapshot, evicting the oldest when full.
    /// Epochs must be consecutive multiples of the period.
    pub fn push(&mut self, snapshot: RankSnapshot) -> Result<Option<RankSnapshot>> {
        let last = self.latest().map(|s| s.epoch);
        let aligned = snapshot.epoch % self.period == 0;
        let consecutive = last.map_or(true, |l| snapshot.epoch == l + self.period);
        if !aligned || !consecutive {
            return Err(Error::SnapshotEpoch {
                epoch: snapshot.epoch,
                period: self.period,
                last,
            });
        }
        self.push_unchecked(snapshot)
    }

    /// Appends a snapshot without the epoch schedule check, as done when a
    /// fresh snapshot of the final parameters is taken for inference.
    pub fn push_final(&mut self, snapshot: RankSnapshot) -> Result<Option<RankSnapshot>> {
        self.push_unchecked(snapshot)
    }

    fn push_unchecked(&mut self, snapshot: RankSnapshot) -> Result<Option<RankSnapshot>> {
        if snapshot.cap != self.cap {
            return Err(Error::Shape(format!(
                "snapshot cap {} differs from queue cap {}",
                snapshot.cap, self.cap
            )));
        }
        if let Some(last) = self.latest() {
            last.compatible(&snapshot)?;
        }
        self.snapshots.push_back(snapshot);
        Ok(if self.snapshots.len() > self.capacity {
            self.snapshots.pop_front()
        } else {
            None
        })
    }

    /// Scores the model with `heads` and pushes the result.
    pub fn record(
        &mut self,
        params: &ModelParams,
        heads: &[HeadId],
        train: &InteractionSet,
        epoch: usize,
    ) -> Result<Option<RankSnapshot>> {
        let snapshot = RankSnapshot::compute(params, heads, train, self.cap, epoch)?;
        self.push(snapshot)
    }

    /// Binary dump (little-endian):
    ///
    /// ```text
    /// "CONCFQUE", u32 version 1, u32 capacity, u32 period, u32 cap,
    /// u32 snapshot count, then per snapshot:
    ///   u64 epoch, u8 head count, head codes, u64 users,
    ///   per head, per user: u32 length, length × u32 items
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(QUEUE_MAGIC);
        for x in [1, self.capacity as u32, self.period as u32, self.cap as u32, self.len() as u32] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for s in &self.snapshots {
            out.extend_from_slice(&(s.epoch as u64).to_le_bytes());
            out.push(s.heads.len() as u8);
            out.extend(s.heads.iter().map(|h| h.code()));
            out.extend_from_slice(&(s.num_users() as u64).to_le_bytes());
            for per_user in &s.lists {
                for list in per_user {
                    out.extend_from_slice(&(list.len() as u32).to_le_bytes());
                    for &i in list {
                        out.extend_from_slice(&i.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != QUEUE_MAGIC {
            return Err(Error::Format("not a snapshot queue (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported queue version {version}")));
        }
        let capacity = r.u32()? as usize;
        let period = r.u32()? as usize;
        let cap = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut queue = Self::new(capacity, period, cap)?;
        if count > capacity {
            return Err(Error::Format(format!("{count} snapshots in a queue of capacity {capacity}")));
        }
        for _ in 0..count {
            let epoch = r.u64()? as usize;
            let n_heads = r.u8()? as usize;
            let heads = (0..n_heads)
                .map(|_| {
                    let c = r.u8()?;
                    HeadId::from_code(c).ok_or_else(|| Error::Format(format!("unknown head code {c}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let users = r.u64()? as usize;
            let mut lists = Vec::with_capacity(n_heads);
            for _ in 0..n_heads {
                let mut per_user = Vec::with_capacity(users);
                for _ in 0..users {
                    let len = r.u32()? as usize;
                    let list = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                    per_user.push(list);
                }
                lists.push(per_user);
            }
            queue.push_unchecked(RankSnapshot::from_lists(epoch, cap, heads, lists)?)?;
        }
        if !r.finished() {
            return Err(Error::Format("trailing bytes after snapshot queue".into()));
        }
        Ok(queue)
    }
}

const QUEUE_MAGIC: &[u8; 8] = b"CONCFQUE";

pub fn write_queue(path: impl AsRef<Path>, queue: &SnapshotQueue) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, queue.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_queue(path: impl AsRef<Path>) -> Result<SnapshotQueue> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    SnapshotQueue::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelShape, SharingLevel};

    fn snap(epoch: usize) -> RankSnapshot {
        RankSnapshot::from_lists(epoch, 3, vec![HeadId::A], vec![vec![vec![0, 1], vec![2]]]).unwrap()
    }

    #[test]
    fn fifo_eviction_and_schedule() {
        let mut q = SnapshotQueue::new(5, 20, 3).unwrap();
        for e in (0..100).step_by(20) {
            assert!(q.push(snap(e)).unwrap().is_none());
        }
        assert!(q.is_full());
        let evicted = q.push(snap(100)).unwrap().unwrap();
        assert_eq!(evicted.epoch(), 0);
        assert_eq!(q.epochs(), vec![20, 40, 60, 80, 100]);

        assert!(matches!(q.push(snap(130)), Err(Error::SnapshotEpoch { epoch: 130, .. })));
        assert!(q.push(snap(140)).is_err(), "skipping a period is rejected");
        assert!(q.push_final(snap(137)).is_ok());
    }

    #[test]
    fn first_snapshot_must_be_aligned() {
        let mut q = SnapshotQueue::new(2, 20, 3).unwrap();
        assert!(q.push(snap(7)).is_err());
        assert!(q.push(snap(40)).is_ok());
    }

    #[test]
    fn rank_clamps_absent_items() {
        let s = snap(0);
        assert_eq!(s.rank(0, 0, 0), 0);
        assert_eq!(s.rank(0, 0, 1), 1);
        assert_eq!(s.rank(0, 0, 2), 3);
    }

    #[test]
    fn computed_snapshot_matches_score_batch() {
        let train = InteractionSet::from_pairs(3, 7, [(0, 1), (1, 4), (2, 0), (2, 6)]).unwrap();
        let params = ModelParams::init(
            ModelShape {
                num_users: 3,
                num_items: 7,
                dim: 8,
                sharing: SharingLevel::EmbeddingOnly,
                heads: HeadId::ALL.to_vec(),
            },
            4,
        )
        .unwrap();
        let snap = RankSnapshot::compute(&params, &HeadId::ALL, &train, 4, 0).unwrap();
        for (slot, &head) in HeadId::ALL.iter().enumerate() {
            let scores = params.score_batch(head, &[0, 1, 2], None).unwrap();
            for u in 0..3 {
                let expected = rank_items(&scores.row(u).to_vec(), train.user_items(u), 4).unwrap();
                assert_eq!(snap.list(slot, u), expected.as_slice());
                for &i in train.user_items(u) {
                    assert!(!snap.list(slot, u).contains(&i));
                }
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let mut q = SnapshotQueue::new(3, 5, 3).unwrap();
        q.push(snap(0)).unwrap();
        q.push(snap(5)).unwrap();
        let bytes = q.to_bytes();
        let back = SnapshotQueue::from_bytes(&bytes).unwrap();
        assert_eq!(back, q);
        assert!(SnapshotQueue::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
