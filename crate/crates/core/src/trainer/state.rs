//! Saving and resuming a [`Trainer`] between epochs.
//!
//! A state directory holds `model.ckpt` (parameters and optimizer),
//! `state.json` (epoch counter, balancing state, history, selection),
//! `queue.bin` when a snapshot queue exists, and the selected and per-head
//! best parameters as `best.ckpt`, `best_queue.bin` and `best_<head>.ckpt`.
//! The consensus is not stored: it is a function of the queue.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Best, HeadBest, TrainConfig, TrainHistory, Trainer};
use crate::balancing::BalanceState;
use crate::consensus::{generate_consensus, read_queue, write_queue};
use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint};

const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateFile {
    version: u32,
    config: TrainConfig,
    next_epoch: usize,
    stopped: bool,
    balance: BalanceState,
    history: TrainHistory,
    best: Option<(usize, f64, bool)>,
    head_best: Vec<Option<(usize, f64)>>,
}

impl<'a> Trainer<'a> {
    pub fn save_state(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_checkpoint(
            dir.join("model.ckpt"),
            &Checkpoint {
                params: self.params.clone(),
                adam: Some(self.adam.clone()),
            },
        )?;
        if let Some(q) = &self.queue {
            write_queue(dir.join("queue.bin"), q)?;
        }
        if let Some(b) = &self.best {
            write_checkpoint(
                dir.join("best.ckpt"),
                &Checkpoint {
                    params: b.params.clone(),
                    adam: None,
                },
            )?;
            if let Some(q) = &b.queue {
                write_queue(dir.join("best_queue.bin"), q)?;
            }
        }
        for hb in self.head_best.iter().flatten() {
            write_checkpoint(
                dir.join(format!("best_{}.ckpt", hb.head)),
                &Checkpoint {
                    params: hb.params.clone(),
                    adam: None,
                },
            )?;
        }
        let state = StateFile {
            version: STATE_VERSION,
            config: self.config.clone(),
            next_epoch: self.next_epoch,
            stopped: self.stopped,
            balance: self.balance.clone(),
            history: self.history.clone(),
            best: self.best.as_ref().map(|b| (b.epoch, b.metric, b.queue.is_some())),
            head_best: self.head_best.iter().map(|h| h.as_ref().map(|h| (h.epoch, h.recall))).collect(),
        };
        let path = dir.join("state.json");
        let json = serde_json::to_string(&state).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Restores a trainer saved with [`Trainer::save_state`]. Continuing it
    /// gives the same parameters as an uninterrupted run.
    pub fn resume(split: &'a SplitDataset, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: StateFile = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if state.version != STATE_VERSION {
            return Err(Error::Format(format!("unsupported trainer state version {}", state.version)));
        }
        let mut trainer = Trainer::new(state.config, split)?;
        let ck = read_checkpoint(dir.join("model.ckpt"))?;
        if ck.params.shape() != trainer.params.shape() {
            return Err(Error::Shape("saved model does not match the configuration and split".into()));
        }
        trainer.params = ck.params;
        trainer.adam = ck.adam.ok_or_else(|| Error::Format("trainer checkpoint lacks optimizer state".into()))?;
        if trainer.queue.is_some() {
            let q = read_queue(dir.join("queue.bin"))?;
            if q.is_full() {
                trainer.consensus = Some(generate_consensus(&q, &trainer.config.consensus_settings())?);
            }
            trainer.queue = Some(q);
        }
        if let Some((epoch, metric, has_queue)) = state.best {
            let params = read_checkpoint(dir.join("best.ckpt"))?.params;
            let queue = if has_queue {
                Some(read_queue(dir.join("best_queue.bin"))?)
            } else {
                None
            };
            trainer.best = Some(Best {
                epoch,
                metric,
                params,
                queue,
            });
        }
        if state.head_best.len() != trainer.heads.len() {
            return Err(Error::Format("per-head selection does not match the heads".into()));
        }
        for (slot, hb) in state.head_best.into_iter().enumerate() {
            if let Some((epoch, recall)) = hb {
                let head = trainer.heads[slot];
                let params = read_checkpoint(dir.join(format!("best_{head}.ckpt")))?.params;
                trainer.head_best[slot] = Some(HeadBest {
                    head,
                    epoch,
                    recall,
                    params,
                });
            }
        }
        trainer.balance = state.balance;
        trainer.history = state.history;
        trainer.next_epoch = state.next_epoch;
        trainer.stopped = state.stopped;
        Ok(trainer)
    }
}
