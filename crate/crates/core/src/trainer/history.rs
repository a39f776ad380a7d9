use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::HeadId;

/// Loss components of one batch. `lambda` holds the weights the batch was
/// trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub cf_loss: Vec<f64>,
    pub cl_loss: Vec<f64>,
    pub lambda: Vec<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per head, summed over batches.
    pub cf_loss: Vec<f64>,
    pub cl_loss: Vec<f64>,
    /// Weights after the last batch.
    pub lambda: Vec<f64>,
    pub total_loss: f64,
    pub consensus_active: bool,
    /// Validation recall per head.
    pub val_recall: Vec<f64>,
    pub val_consensus: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub heads: Vec<HeadId>,
    pub eval_n: usize,
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub wall_clock: f64,
}

impl TrainHistory {
    pub fn last_epoch(&self) -> Option<usize> {
        self.epochs.last().map(|e| e.epoch)
    }

    /// One row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for h in &self.heads {
            let _ = write!(out, ",cf_{h},cl_{h},lambda_{h},val_r{}_{h}", self.eval_n);
        }
        let _ = writeln!(out, ",val_r{}_consensus,total_loss,consensus_active,seconds", self.eval_n);
        for e in &self.epochs {
            let _ = write!(out, "{}", e.epoch);
            for k in 0..self.heads.len() {
                let _ = write!(
                    out,
                    ",{:.6},{:.6},{:.6},{:.6}",
                    e.cf_loss[k], e.cl_loss[k], e.lambda[k], e.val_recall[k]
                );
            }
            let cons = e.val_consensus.map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(
                out,
                ",{cons},{:.6},{},{:.3}",
                e.total_loss, e.consensus_active, e.seconds
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history is serializable")
    }
}
