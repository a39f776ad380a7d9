use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::balancing::{BalanceConfig, LambdaRule};
use crate::consensus::{ConsensusMode, ConsensusSettings};
use crate::error::{Error, Result};
use crate::model::{HeadId, SharingLevel};

/// Which model is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    /// One head on its own, no consensus machinery.
    Single(HeadId),
    /// All configured heads jointly, with consensus learning after warm-up.
    ConCF,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Single(h) => write!(f, "single({h})"),
            TrainMode::ConCF => f.write_str("concf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Heads of the joint model (ignored in single mode).
    pub heads: Vec<HeadId>,
    /// Weight of the consensus-learning loss.
    pub alpha: f64,
    /// Decay temperature of ranking importance.
    pub temperature: f64,
    /// Prefix length of the consensus likelihood.
    pub list_n: usize,
    /// Epochs between ranking snapshots.
    pub period: usize,
    pub queue_size: usize,
    /// Ranking list length kept per head and user in a snapshot.
    pub rank_cap: usize,
    /// Stored consensus length; `None` means `2 · list_n`.
    pub consensus_len: Option<usize>,
    pub consensus_mode: ConsensusMode,
    pub lr: f64,
    pub batch_size: usize,
    pub dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub sharing: SharingLevel,
    pub balance: BalanceConfig,
    /// Margin of the triplet hinge.
    pub margin: f64,
    /// Include the item-wise (column) term of the multinomial loss.
    pub cf_e_column: bool,
    pub weight_decay: f64,
    /// Cutoff of the validation recall used for model selection.
    pub eval_n: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::ConCF,
            heads: HeadId::ALL.to_vec(),
            alpha: 0.01,
            temperature: 10.0,
            list_n: 50,
            period: 20,
            queue_size: 5,
            rank_cap: 300,
            consensus_len: None,
            consensus_mode: ConsensusMode::RC,
            lr: 0.01,
            batch_size: 1024,
            dim: 64,
            max_epochs: 500,
            patience: 20,
            sharing: SharingLevel::EmbeddingOnly,
            balance: BalanceConfig::default(),
            margin: 1.0,
            cf_e_column: true,
            weight_decay: 0.0,
            eval_n: 50,
            seed: 0,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "head",
    "heads",
    "alpha",
    "temperature",
    "list_n",
    "period",
    "queue_size",
    "rank_cap",
    "consensus_len",
    "consensus_mode",
    "lr",
    "batch_size",
    "dim",
    "max_epochs",
    "patience",
    "sharing",
    "balancing",
    "lambda_lr",
    "lambda_sum",
    "lambda_rule",
    "margin",
    "cf_e_column",
    "weight_decay",
    "eval_n",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {value:?}"))),
    }
}

impl TrainConfig {
    pub fn warmup_epochs(&self) -> usize {
        match self.mode {
            TrainMode::ConCF => self.queue_size * self.period,
            TrainMode::Single(_) => 0,
        }
    }

    pub fn consensus_len(&self) -> usize {
        self.consensus_len.unwrap_or(2 * self.list_n)
    }

    pub fn consensus_settings(&self) -> ConsensusSettings {
        ConsensusSettings {
            temperature: self.temperature,
            length: self.consensus_len(),
            mode: self.consensus_mode,
        }
    }

    /// Heads actually trained under the mode.
    pub fn active_heads(&self) -> Vec<HeadId> {
        match self.mode {
            TrainMode::Single(h) => vec![h],
            TrainMode::ConCF => self.heads.clone(),
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "mode" => {
                self.mode = match value.trim().to_ascii_lowercase().as_str() {
                    "concf" => TrainMode::ConCF,
                    "single" => TrainMode::Single(match self.mode {
                        TrainMode::Single(h) => h,
                        TrainMode::ConCF => HeadId::A,
                    }),
                    other => {
                        let head = other
                            .strip_prefix("single:")
                            .ok_or_else(|| Error::Config(format!("mode: expected concf or single, got {value:?}")))?;
                        TrainMode::Single(head.parse().map_err(|e: String| Error::Config(format!("mode: {e}")))?)
                    }
                }
            }
            "head" => {
                let h: HeadId = value.parse().map_err(|e: String| Error::Config(format!("head: {e}")))?;
                self.mode = TrainMode::Single(h);
            }
            "heads" => {
                self.heads = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse().map_err(|e: String| Error::Config(format!("heads: {e}"))))
                    .collect::<Result<_>>()?;
            }
            "alpha" => self.alpha = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "list_n" => self.list_n = parse(key, value)?,
            "period" => self.period = parse(key, value)?,
            "queue_size" => self.queue_size = parse(key, value)?,
            "rank_cap" => self.rank_cap = parse(key, value)?,
            "consensus_len" => {
                self.consensus_len = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "consensus_mode" => {
                self.consensus_mode = value.parse().map_err(|e: String| Error::Config(format!("{key}: {e}")))?
            }
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "sharing" => self.sharing = value.parse().map_err(|e: String| Error::Config(format!("{key}: {e}")))?,
            "balancing" => self.balance.enabled = parse_bool(key, value)?,
            "lambda_lr" => self.balance.lr = parse(key, value)?,
            "lambda_sum" => self.balance.target_sum = parse(key, value)?,
            "lambda_rule" => {
                self.balance.rule = value
                    .parse::<LambdaRule>()
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?
            }
            "margin" => self.margin = parse(key, value)?,
            "cf_e_column" => self.cf_e_column = parse_bool(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "eval_n" => self.eval_n = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} (known keys: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Every field as `key = value` lines accepted back by [`TrainConfig::set`].
    pub fn to_kv(&self) -> String {
        let heads: Vec<String> = self.heads.iter().map(|h| h.to_string()).collect();
        let mode = match self.mode {
            TrainMode::ConCF => "concf".to_string(),
            TrainMode::Single(h) => format!("single:{h}"),
        };
        let rule = match self.balance.rule {
            LambdaRule::LogScale => "log-scale",
            LambdaRule::Linear => "linear",
        };
        let cmode = match self.consensus_mode {
            ConsensusMode::RC => "RC",
            ConsensusMode::R => "R",
        };
        let lines = [
            ("mode", mode),
            ("heads", heads.join(",")),
            ("alpha", self.alpha.to_string()),
            ("temperature", self.temperature.to_string()),
            ("list_n", self.list_n.to_string()),
            ("period", self.period.to_string()),
            ("queue_size", self.queue_size.to_string()),
            ("rank_cap", self.rank_cap.to_string()),
            (
                "consensus_len",
                self.consensus_len.map_or("auto".into(), |l| l.to_string()),
            ),
            ("consensus_mode", cmode.into()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dim", self.dim.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("sharing", self.sharing.to_string()),
            ("balancing", self.balance.enabled.to_string()),
            ("lambda_lr", self.balance.lr.to_string()),
            ("lambda_sum", self.balance.target_sum.to_string()),
            ("lambda_rule", rule.into()),
            ("margin", self.margin.to_string()),
            ("cf_e_column", self.cf_e_column.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("eval_n", self.eval_n.to_string()),
            ("seed", self.seed.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        if self.list_n == 0 || self.consensus_len() < self.list_n {
            return bad(format!(
                "need 1 <= list_n <= consensus_len (got {} and {})",
                self.list_n,
                self.consensus_len()
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_n == 0 || self.rank_cap == 0 {
            return bad("batch_size, max_epochs, eval_n and rank_cap must be positive".into());
        }
        if self.dim == 0 || self.dim % 4 != 0 {
            return bad(format!("dim must be a positive multiple of 4, got {}", self.dim));
        }
        if let TrainMode::ConCF = self.mode {
            if self.heads.is_empty() {
                return bad("at least one head is required".into());
            }
            let mut sorted = self.heads.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != self.heads.len() {
                return bad("heads must be distinct".into());
            }
            if self.period == 0 || self.queue_size == 0 {
                return bad("period and queue_size must be positive".into());
            }
            if self.queue_size < 2 && self.consensus_mode == ConsensusMode::RC {
                return bad("RC consensus needs a queue of at least two snapshots".into());
            }
            if self.warmup_epochs() > self.max_epochs {
                return bad(format!(
                    "warm-up of {} epochs (queue_size * period) exceeds max_epochs {}",
                    self.warmup_epochs(),
                    self.max_epochs
                ));
            }
        }
        if !(self.balance.target_sum > 0.0) || !(self.balance.lr >= 0.0) {
            return bad("lambda_sum must be positive and lambda_lr non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.alpha, 0.01);
        assert_eq!(c.temperature, 10.0);
        assert_eq!(c.list_n, 50);
        assert_eq!(c.consensus_len(), 100);
        assert_eq!(c.warmup_epochs(), 100);
        assert_eq!(c.sharing, SharingLevel::EmbeddingOnly);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::default();
        c.set("mode", "single:E").unwrap();
        c.set("alpha", "0.5").unwrap();
        c.set("consensus_len", "70").unwrap();
        c.set("lambda_rule", "linear").unwrap();
        c.set("balancing", "off").unwrap();
        c.set("sharing", "no-sharing").unwrap();
        let mut back = TrainConfig::default();
        for line in c.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v.trim()).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(back.mode, TrainMode::Single(HeadId::E));
    }

    #[test]
    fn unknown_key_and_bad_values() {
        let mut c = TrainConfig::default();
        let err = c.set("alhpa", "1").unwrap_err().to_string();
        assert!(err.contains("alhpa"), "{err}");
        assert!(c.set("alpha", "x").unwrap_err().to_string().contains("alpha"));
        c.set("max_epochs", "50").unwrap();
        assert!(c.validate().is_err(), "warm-up longer than training");
        c.set("mode", "single").unwrap();
        c.validate().unwrap();
    }
}
