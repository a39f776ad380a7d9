//! Multi-head two-tower scoring model.
//!
//! Each head owns a user tower and an item tower of the same shape:
//!
//! ```text
//! embedding (d) -> dense d/2 + relu -> dense d/4 + relu -> head map d/4 -> d/4
//! ```
//!
//! The head outputs `z_u`, `z_i` are combined by a head-specific
//! interaction: inner product for A, C (through a logistic link), D and E;
//! negative Euclidean distance for B, whose outputs are projected onto the
//! unit ball first. How much of the towers the heads share is set by
//! [`SharingLevel`].

mod adam;
mod checkpoint;
mod forward;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub(crate) use checkpoint::ByteReader;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use forward::{FullScorer, HeadForward, TowerActivations};

use crate::error::{Error, Result};

/// One of the five learning objectives a head is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadId {
    /// Pairwise ranking (BPR).
    A,
    /// Metric learning with a triplet hinge.
    B,
    /// Binary cross-entropy.
    C,
    /// Squared error.
    D,
    /// Multinomial likelihood.
    E,
}

impl HeadId {
    pub const ALL: [HeadId; 5] = [HeadId::A, HeadId::B, HeadId::C, HeadId::D, HeadId::E];

    pub fn tag(self) -> char {
        match self {
            HeadId::A => 'A',
            HeadId::B => 'B',
            HeadId::C => 'C',
            HeadId::D => 'D',
            HeadId::E => 'E',
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        HeadId::ALL.get(code as usize).copied()
    }

    /// Maps the raw interaction value to the head's relevance score.
    pub fn link(self, raw: f64) -> f64 {
        match self {
            HeadId::C => sigmoid(raw),
            _ => raw,
        }
    }

    /// Derivative of [`HeadId::link`] at `raw`.
    pub fn link_derivative(self, raw: f64) -> f64 {
        match self {
            HeadId::C => {
                let s = sigmoid(raw);
                s * (1.0 - s)
            }
            _ => 1.0,
        }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

impl FromStr for HeadId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" | "CF-A" => Ok(HeadId::A),
            "B" | "CF-B" => Ok(HeadId::B),
            "C" | "CF-C" => Ok(HeadId::C),
            "D" | "CF-D" => Ok(HeadId::D),
            "E" | "CF-E" => Ok(HeadId::E),
            other => Err(format!("unknown head {other:?} (expected one of A..E)")),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which parameters the heads have in common.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SharingLevel {
    /// Embeddings and both encoder layers are shared; heads own only their head maps.
    Full,
    /// Embeddings and the first encoder layer are shared.
    EmbeddingPlusOneLayer,
    /// Only the user/item embeddings are shared.
    #[default]
    EmbeddingOnly,
    /// Every head is an independent model.
    NoSharing,
}

impl SharingLevel {
    fn code(self) -> u8 {
        match self {
            SharingLevel::Full => 0,
            SharingLevel::EmbeddingPlusOneLayer => 1,
            SharingLevel::EmbeddingOnly => 2,
            SharingLevel::NoSharing => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SharingLevel::Full,
            1 => SharingLevel::EmbeddingPlusOneLayer,
            2 => SharingLevel::EmbeddingOnly,
            3 => SharingLevel::NoSharing,
            _ => return None,
        })
    }

    /// Number of leading tower stages shared across heads (embedding counts as one).
    fn shared_stages(self) -> usize {
        match self {
            SharingLevel::Full => 3,
            SharingLevel::EmbeddingPlusOneLayer => 2,
            SharingLevel::EmbeddingOnly => 1,
            SharingLevel::NoSharing => 0,
        }
    }
}

impl FromStr for SharingLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "full" => Ok(SharingLevel::Full),
            "embeddingplusonelayer" | "embedding+layer" | "emblayer" => {
                Ok(SharingLevel::EmbeddingPlusOneLayer)
            }
            "embeddingonly" | "embedding" | "emb" => Ok(SharingLevel::EmbeddingOnly),
            "nosharing" | "none" => Ok(SharingLevel::NoSharing),
            other => Err(format!(
                "unknown sharing level {other:?} (expected full, embedding-plus-one-layer, embedding-only, no-sharing)"
            )),
        }
    }
}

impl fmt::Display for SharingLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharingLevel::Full => "full",
            SharingLevel::EmbeddingPlusOneLayer => "embedding-plus-one-layer",
            SharingLevel::EmbeddingOnly => "embedding-only",
            SharingLevel::NoSharing => "no-sharing",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tower {
    User,
    Item,
}

impl Tower {
    fn name(self) -> &'static str {
        match self {
            Tower::User => "user",
            Tower::Item => "item",
        }
    }
}

/// Tensor indices making up one tower of one head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TowerLayout {
    pub emb: usize,
    pub l1_w: usize,
    pub l1_b: usize,
    pub l2_w: usize,
    pub l2_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub sharing: SharingLevel,
    pub heads: Vec<HeadId>,
}

/// All trainable tensors of a multi-head model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    shape: ModelShape,
    tensors: Vec<Tensor>,
    layout: Vec<[TowerLayout; 2]>,
    version: u64,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.tensors == other.tensors
    }
}

impl ModelParams {
    /// Fresh parameters. Embeddings are drawn from N(0, 0.01²) and dense
    /// weights from U(−a, a) with `a = sqrt(6 / (fan_in + fan_out))`; biases
    /// start at zero. Every tensor has its own generator derived from
    /// `seed` and the tensor name, so a head's private tensors do not depend
    /// on which other heads exist.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let d = shape.dim;
        if d == 0 || d % 4 != 0 {
            return Err(Error::Config(format!("embedding dimension must be a positive multiple of 4, got {d}")));
        }
        if shape.heads.is_empty() {
            return Err(Error::Config("a model needs at least one head".into()));
        }
        let mut dedup = shape.heads.clone();
        dedup.sort();
        dedup.dedup();
        if dedup.len() != shape.heads.len() {
            return Err(Error::Config(format!("duplicate heads in {:?}", shape.heads)));
        }

        let mut builder = LayoutBuilder::default();
        let layout = shape
            .heads
            .iter()
            .map(|&head| {
                [Tower::User, Tower::Item].map(|tower| builder.tower(&shape, head, tower))
            })
            .collect();
        let tensors = builder
            .specs
            .into_iter()
            .map(|spec| spec.materialize(seed))
            .collect();
        Ok(Self {
            shape,
            tensors,
            layout,
            version: 0,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    /// Width of head outputs (`d/4`).
    pub fn out_dim(&self) -> usize {
        self.shape.dim / 4
    }

    pub fn num_users(&self) -> usize {
        self.shape.num_users
    }

    pub fn num_items(&self) -> usize {
        self.shape.num_items
    }

    pub fn heads(&self) -> &[HeadId] {
        &self.shape.heads
    }

    pub fn sharing(&self) -> SharingLevel {
        self.shape.sharing
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Mutable access to the raw tensors. Invalidates cached activations.
    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.tensors
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    /// Monotone counter bumped by every parameter mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn slot(&self, head: HeadId) -> Result<usize> {
        self.shape
            .heads
            .iter()
            .position(|&h| h == head)
            .ok_or(Error::UnknownHead(head))
    }

    pub(crate) fn tower_layout(&self, slot: usize, tower: Tower) -> &TowerLayout {
        &self.layout[slot][tower as usize]
    }

    /// Indices of the user and item embedding tables feeding `head`.
    pub fn embedding_tensors(&self, head: HeadId) -> Result<[usize; 2]> {
        let slot = self.slot(head)?;
        Ok([self.layout[slot][0].emb, self.layout[slot][1].emb])
    }

    /// All tensor indices on the path of `head`.
    pub fn head_tensors(&self, head: HeadId) -> Result<Vec<usize>> {
        let slot = self.slot(head)?;
        let mut out: Vec<usize> = self.layout[slot]
            .iter()
            .flat_map(|t| [t.emb, t.l1_w, t.l1_b, t.l2_w, t.l2_b, t.head_w, t.head_b])
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Relevance score of `(u, i)` under `head`.
    pub fn score(&self, head: HeadId, u: usize, i: usize) -> Result<f64> {
        let fwd = HeadForward::new(self, head, &[u], &[i])?;
        fwd.score(u, i)
    }

    /// Scores of every `(users[r], items[c])` pair. `items = None` means all items.
    pub fn score_batch(&self, head: HeadId, users: &[usize], items: Option<&[usize]>) -> Result<Array2<f64>> {
        let Some(items) = items else {
            return FullScorer::new(self, head)?.scores(users);
        };
        let fwd = HeadForward::new(self, head, users, items)?;
        let mut block = fwd.raw_block(users, items)?;
        if head == HeadId::C {
            block.mapv_inplace(sigmoid);
        }
        Ok(block)
    }
}

/// Dense gradient buffers with the same layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tensors: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.value.raw_dim()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Array2<f64> {
        &mut self.tensors[index]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.scaled_add(scale, b);
        }
    }

    /// Euclidean norm over the listed tensors.
    pub fn norm_of(&self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .map(|&k| self.tensors[k].iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Name-free check used before an update; returns the first offending tensor.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors.iter().position(|t| t.iter().any(|g| !g.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|&g| g == 0.0))
    }
}

#[derive(Clone, Copy, Debug)]
enum InitKind {
    Embedding,
    Weight,
    Bias,
}

struct TensorSpec {
    name: String,
    rows: usize,
    cols: usize,
    kind: InitKind,
}

impl TensorSpec {
    fn materialize(self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &self.name));
        let value = match self.kind {
            InitKind::Embedding => {
                let normal = Normal::new(0.0, 0.01).expect("valid normal");
                Array2::from_shape_simple_fn((self.rows, self.cols), || normal.sample(&mut rng))
            }
            InitKind::Weight => {
                let a = (6.0 / (self.rows + self.cols) as f64).sqrt();
                let uniform = Uniform::new_inclusive(-a, a);
                Array2::from_shape_simple_fn((self.rows, self.cols), || uniform.sample(&mut rng))
            }
            InitKind::Bias => Array2::zeros((self.rows, self.cols)),
        };
        Tensor {
            name: self.name,
            value,
        }
    }
}

/// FNV-1a of the name folded into the seed, finished with splitmix64.
fn mix(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    by_name: HashMap<String, usize>,
}

impl LayoutBuilder {
    fn get(&mut self, name: String, rows: usize, cols: usize, kind: InitKind) -> usize {
        if let Some(&k) = self.by_name.get(&name) {
            return k;
        }
        let k = self.specs.len();
        self.by_name.insert(name.clone(), k);
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            kind,
        });
        k
    }

    fn tower(&mut self, shape: &ModelShape, head: HeadId, tower: Tower) -> TowerLayout {
        let d = shape.dim;
        let shared = shape.sharing.shared_stages();
        let owner = |stage: usize| {
            if stage < shared {
                "shared".to_string()
            } else {
                head.tag().to_string()
            }
        };
        let t = tower.name();
        let rows = match tower {
            Tower::User => shape.num_users,
            Tower::Item => shape.num_items,
        };
        let emb = self.get(format!("{}.{t}_emb", owner(0)), rows, d, InitKind::Embedding);
        let l1_w = self.get(format!("{}.{t}_l1_w", owner(1)), d, d / 2, InitKind::Weight);
        let l1_b = self.get(format!("{}.{t}_l1_b", owner(1)), 1, d / 2, InitKind::Bias);
        let l2_w = self.get(format!("{}.{t}_l2_w", owner(2)), d / 2, d / 4, InitKind::Weight);
        let l2_b = self.get(format!("{}.{t}_l2_b", owner(2)), 1, d / 4, InitKind::Bias);
        let head_w = self.get(format!("{}.{t}_head_w", head.tag()), d / 4, d / 4, InitKind::Weight);
        let head_b = self.get(format!("{}.{t}_head_b", head.tag()), 1, d / 4, InitKind::Bias);
        TowerLayout {
            emb,
            l1_w,
            l1_b,
            l2_w,
            l2_b,
            head_w,
            head_b,
        }
    }
}
