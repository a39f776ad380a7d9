//! Per-head loss weights balanced by gradient magnitude on the shared
//! embeddings.
//!
//! Each batch, head `x` has weighted gradient scale `G_x = λ_x ‖∇_emb L_x‖`
//! and relative training ratio `γ_x`. The weights move so that every `G_x`
//! approaches `mean(G) · γ_x`: heads that have made less progress relative
//! to their initial loss get a larger share of the shared update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LAMBDA_FLOOR: f64 = 1e-6;

/// How one balancing step changes λ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaRule {
    /// `λ ← λ · exp(−lr · sign(G − target) · G / mean(G))`. Steps are
    /// relative to λ and to the head's share of the gradient scale, so the
    /// rule behaves the same whatever the raw loss magnitudes are.
    #[default]
    LogScale,
    /// Plain subgradient step `λ ← λ − lr · sign(G − target) · ‖∇L‖`.
    Linear,
}

impl std::str::FromStr for LambdaRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "logscale" | "log" => Ok(LambdaRule::LogScale),
            "linear" => Ok(LambdaRule::Linear),
            other => Err(format!("unknown lambda rule {other:?} (expected log-scale or linear)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub enabled: bool,
    pub lr: f64,
    /// Σλ after every update.
    pub target_sum: f64,
    pub rule: LambdaRule,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lr: 0.025,
            target_sum: 1.0,
            rule: LambdaRule::LogScale,
        }
    }
}

/// `γ_x = (L_x / L⁰_x) / mean_y(L_y / L⁰_y)`.
pub fn relative_ratio(current: &[f64], initial: &[f64]) -> Result<Vec<f64>> {
    if current.len() != initial.len() || current.is_empty() {
        return Err(Error::Shape(format!(
            "{} current losses for {} initial losses",
            current.len(),
            initial.len()
        )));
    }
    if let Some(bad) = initial.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Config(format!("initial loss must be positive, got {bad}")));
    }
    let ratios: Vec<f64> = current.iter().zip(initial).map(|(l, l0)| l / l0).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    if mean == 0.0 {
        return Ok(vec![1.0; ratios.len()]);
    }
    Ok(ratios.into_iter().map(|r| r / mean).collect())
}

/// Quantities of one balancing step, for logging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceStep {
    pub gamma: Vec<f64>,
    /// Weighted gradient scales `λ_x ‖∇L_x‖` before the update.
    pub scales: Vec<f64>,
    pub targets: Vec<f64>,
    /// `Σ |G_x − target_x|`.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceState {
    config: BalanceConfig,
    lambda: Vec<f64>,
    initial: Option<Vec<f64>>,
}

impl BalanceState {
    /// Starts with equal weights summing to the target.
    pub fn new(heads: usize, config: BalanceConfig) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config("balancing needs at least one head".into()));
        }
        if !(config.target_sum > 0.0) || !(config.lr >= 0.0) {
            return Err(Error::Config(format!(
                "balancing needs a positive target sum and non-negative rate (got {}, {})",
                config.target_sum, config.lr
            )));
        }
        Ok(Self {
            config,
            lambda: vec![config.target_sum / heads as f64; heads],
            initial: None,
        })
    }

    pub fn config(&self) -> &BalanceConfig {
        &self.config
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn initial_losses(&self) -> Option<&[f64]> {
        self.initial.as_deref()
    }

    /// One update from the current per-head losses and the norms of their
    /// unweighted gradients on the shared embeddings. The first call only
    /// records the initial losses.
    pub fn step(&mut self, losses: &[f64], grad_norms: &[f64]) -> Result<Option<BalanceStep>> {
        let n = self.lambda.len();
        if losses.len() != n || grad_norms.len() != n {
            return Err(Error::Shape(format!(
                "{} losses and {} gradient norms for {n} heads",
                losses.len(),
                grad_norms.len()
            )));
        }
        let Some(initial) = &self.initial else {
            relative_ratio(losses, losses)?;
            self.initial = Some(losses.to_vec());
            return Ok(None);
        };
        if !self.config.enabled || grad_norms.iter().all(|&g| g == 0.0) {
            return Ok(None);
        }
        if let Some(bad) = grad_norms.iter().chain(losses).find(|x| !x.is_finite()) {
            return Err(Error::Config(format!("non-finite balancing input {bad}")));
        }

        let gamma = relative_ratio(losses, initial)?;
        let scales: Vec<f64> = self.lambda.iter().zip(grad_norms).map(|(l, g)| l * g).collect();
        let mean = scales.iter().sum::<f64>() / n as f64;
        let targets: Vec<f64> = gamma.iter().map(|g| mean * g).collect();
        let objective = scales.iter().zip(&targets).map(|(s, t)| (s - t).abs()).sum();

        let lr = self.config.lr;
        for x in 0..n {
            let dir = sign(scales[x] - targets[x]);
            match self.config.rule {
                LambdaRule::LogScale => {
                    self.lambda[x] *= (-lr * dir * scales[x] / mean).exp();
                }
                LambdaRule::Linear => {
                    self.lambda[x] -= lr * dir * grad_norms[x];
                }
            }
            self.lambda[x] = self.lambda[x].max(LAMBDA_FLOOR);
        }
        let total: f64 = self.lambda.iter().sum();
        let s = self.config.target_sum;
        for l in &mut self.lambda {
            *l *= s / total;
        }
        Ok(Some(BalanceStep {
            gamma,
            scales,
            targets,
            objective,
        }))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(relative_ratio(&[2.0, 4.0, 1.0], &[1.0, 2.0, 0.5]).unwrap(), vec![1.0; 3]);
        let g = relative_ratio(&[0.5, 1.0], &[1.0, 1.0]).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-15 && (g[1] - 4.0 / 3.0).abs() < 1e-15);
        let g = relative_ratio(&[0.0, 1.0, 1.0], &[1.0; 3]).unwrap();
        assert_eq!(g[0], 0.0);
        assert!(g[1] > 1.0 && g[2] > 1.0);
        assert!(relative_ratio(&[1.0], &[0.0]).is_err());
    }

    fn started(rule: LambdaRule, heads: usize) -> BalanceState {
        let mut s = BalanceState::new(
            heads,
            BalanceConfig {
                rule,
                ..Default::default()
            },
        )
        .unwrap();
        s.step(&vec![1.0; heads], &vec![1.0; heads]).unwrap();
        s
    }

    #[test]
    fn initial_losses_recorded_once() {
        let mut s = BalanceState::new(2, BalanceConfig::default()).unwrap();
        assert_eq!(s.lambda(), &[0.5, 0.5]);
        assert!(s.step(&[3.0, 4.0], &[1.0, 2.0]).unwrap().is_none());
        assert_eq!(s.lambda(), &[0.5, 0.5]);
        s.step(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(s.initial_losses(), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn fixed_point_is_unchanged() {
        for rule in [LambdaRule::LogScale, LambdaRule::Linear] {
            let mut s = started(rule, 4);
            let before = s.lambda().to_vec();
            let info = s.step(&[1.0; 4], &[2.0; 4]).unwrap().unwrap();
            assert_eq!(info.objective, 0.0);
            assert_eq!(s.lambda(), before.as_slice());
        }
    }

    #[test]
    fn larger_gradient_loses_weight() {
        for rule in [LambdaRule::LogScale, LambdaRule::Linear] {
            let mut s = started(rule, 2);
            let info = s.step(&[1.0, 1.0], &[10.0, 1.0]).unwrap().unwrap();
            assert_eq!(info.scales, vec![5.0, 0.5]);
            assert_eq!(info.targets, vec![2.75, 2.75]);
            assert!(s.lambda()[0] < 0.5 && s.lambda()[1] > 0.5, "{rule:?}: {:?}", s.lambda());
        }
    }

    #[test]
    fn degenerate_batch_and_disabled_state() {
        let mut s = started(LambdaRule::LogScale, 2);
        s.step(&[1.0, 1.0], &[10.0, 1.0]).unwrap();
        let before = s.lambda().to_vec();
        assert!(s.step(&[1.0, 1.0], &[0.0, 0.0]).unwrap().is_none());
        assert_eq!(s.lambda(), before.as_slice());

        let mut off = BalanceState::new(
            5,
            BalanceConfig {
                enabled: false,
                ..Default::default()
            },
        )
        .unwrap();
        for k in 0..10 {
            off.step(&[1.0 + k as f64; 5], &[k as f64, 1.0, 2.0, 3.0, 4.0]).unwrap();
            assert_eq!(off.lambda(), &[0.2; 5]);
        }
    }

    #[test]
    fn linear_rule_clamps_at_floor() {
        let mut s = BalanceState::new(
            2,
            BalanceConfig {
                lr: 1.0,
                rule: LambdaRule::Linear,
                ..Default::default()
            },
        )
        .unwrap();
        s.step(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        s.step(&[1.0, 1.0], &[100.0, 1.0]).unwrap();
        let l = s.lambda();
        assert!(l[0] > 0.0 && l[0] < 1e-5);
        assert!((l[0] + l[1] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weights_stay_positive_and_normalized(
            rule in prop_oneof![Just(LambdaRule::LogScale), Just(LambdaRule::Linear)],
            target in 0.1f64..10.0,
            steps in prop::collection::vec(
                (prop::collection::vec(0.01f64..100.0, 4), prop::collection::vec(0.0f64..1000.0, 4)),
                1..30,
            ),
        ) {
            let mut s = BalanceState::new(4, BalanceConfig { rule, target_sum: target, ..Default::default() }).unwrap();
            for (losses, norms) in steps {
                s.step(&losses, &norms).unwrap();
                let sum: f64 = s.lambda().iter().sum();
                prop_assert!((sum - target).abs() < 1e-12 * target.max(1.0));
                prop_assert!(s.lambda().iter().all(|&l| l > 0.0));
            }
        }
    }
}
