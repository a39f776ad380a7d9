//! One-class collaborative filtering with a multi-head model trained under
//! five heterogeneous objectives whose heads learn from a shared ranking
//! consensus.
//!
//! The pieces, bottom up:
//!
//! - [`dataset`]: loading, per-user splitting, negative sampling.
//! - [`model`]: the multi-head two-tower scorer, Adam and checkpoints.
//! - [`objectives`]: the five CF losses.
//! - [`consensus`]: ranking snapshots and consensus generation.
//! - [`ranking_loss`]: the top-N listwise loss against the consensus.
//! - [`balancing`]: per-head loss weights.
//! - [`trainer`]: the training loop and both deployment modes.
//! - [`eval`]: ranking metrics and complementarity analysis.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
pub mod balancing;
pub mod consensus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod ranking_loss;
pub mod trainer;

pub use balancing::{BalanceConfig, BalanceState, LambdaRule};
pub use consensus::{
    generate_consensus, rank_items, ConsensusList, ConsensusMode, ConsensusSettings, RankSnapshot, SnapshotQueue,
};
pub use dataset::{InteractionSet, SplitDataset};
pub use error::{Error, Result};
pub use model::{HeadId, ModelParams, ModelShape, SharingLevel};
pub use trainer::{infer_consensus, infer_target, train, TrainConfig, TrainMode, TrainOutcome};
