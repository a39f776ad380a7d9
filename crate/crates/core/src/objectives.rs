//! The five one-class CF losses, as functions of head scores.
//!
//! Each returns the summed loss and its gradient with respect to the inputs
//! it was given. Losses are sums over the batch, not means.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::sigmoid;

/// Loss value with per-input gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Pairwise loss value with gradients on the positive and negative scores.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLossGrad {
    pub loss: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// CF-A (BPR): `Σ −ln σ(r̂_ui − r̂_uj)`.
pub fn loss_cf_a(pos: &[f64], neg: &[f64]) -> PairLossGrad {
    assert_eq!(pos.len(), neg.len(), "one negative per positive");
    let mut loss = 0.0;
    let mut grad_pos = Vec::with_capacity(pos.len());
    let mut grad_neg = Vec::with_capacity(pos.len());
    for (&p, &n) in pos.iter().zip(neg) {
        let delta = p - n;
        loss += softplus(-delta);
        // d/dΔ of −ln σ(Δ) = −(1 − σ(Δ)) = −σ(−Δ)
        let g = -sigmoid(-delta);
        grad_pos.push(g);
        grad_neg.push(-g);
    }
    PairLossGrad {
        loss,
        grad_pos,
        grad_neg,
    }
}

/// CF-B (triplet hinge): `Σ [−r̂_ui + r̂_uj + m]₊` on negative-distance scores.
pub fn loss_cf_b(pos: &[f64], neg: &[f64], margin: f64) -> PairLossGrad {
    assert_eq!(pos.len(), neg.len(), "one negative per positive");
    let mut loss = 0.0;
    let mut grad_pos = Vec::with_capacity(pos.len());
    let mut grad_neg = Vec::with_capacity(pos.len());
    for (&p, &n) in pos.iter().zip(neg) {
        let h = -p + n + margin;
        if h > 0.0 {
            loss += h;
            grad_pos.push(-1.0);
            grad_neg.push(1.0);
        } else {
            grad_pos.push(0.0);
            grad_neg.push(0.0);
        }
    }
    PairLossGrad {
        loss,
        grad_pos,
        grad_neg,
    }
}

/// CF-C (binary cross-entropy) on logits, `r̂ = σ(logit)`.
///
/// The loss is `Σ softplus(x) − r·x`, which equals
/// `−Σ r ln r̂ + (1 − r) ln(1 − r̂)`; the gradient is `r̂ − r` with respect to
/// the logit.
pub fn loss_cf_c(logits: &[f64], labels: &[f64]) -> LossGrad {
    assert_eq!(logits.len(), labels.len());
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&x, &r)| {
            loss += softplus(x) - r * x;
            sigmoid(x) - r
        })
        .collect();
    LossGrad { loss, grad }
}

/// CF-C evaluated directly on probabilities; reference form of [`loss_cf_c`].
pub fn bce_from_probabilities(probs: &[f64], labels: &[f64]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &r)| {
            let mut l = 0.0;
            if r != 0.0 {
                l -= r * p.ln();
            }
            if r != 1.0 {
                l -= (1.0 - r) * (1.0 - p).ln();
            }
            l
        })
        .sum()
}

/// CF-D (squared error): `½ Σ (r − r̂)²`.
pub fn loss_cf_d(scores: &[f64], labels: &[f64]) -> LossGrad {
    assert_eq!(scores.len(), labels.len());
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&s, &r)| {
            loss += 0.5 * (r - s) * (r - s);
            s - r
        })
        .collect();
    LossGrad { loss, grad }
}

/// CF-E (multinomial) over the rows of a logit block.
///
/// Row `k` is softmax-normalised across its columns; `positives[k]` lists the
/// columns observed for that row. Returns `−Σ_k Σ_{c ∈ positives[k]} ln p̂_kc`
/// and the gradient `|positives[k]| · p̂_k − 1[positives[k]]` per row. Use
/// it on `users × items` for the row-wise term and on `items × users` for
/// the column-wise term.
pub fn loss_cf_e<P: AsRef<[u32]>>(logits: ArrayView2<f64>, positives: &[P]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != positives.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} positive lists",
            logits.nrows(),
            positives.len()
        )));
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (k, (row, mut g)) in logits
        .axis_iter(Axis(0))
        .zip(grad.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let pos = positives[k].as_ref();
        if pos.is_empty() {
            return Err(Error::NoPositives(k));
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut sum = 0.0;
        for (gc, &x) in g.iter_mut().zip(row.iter()) {
            *gc = (x - max).exp();
            sum += *gc;
        }
        let lse = max + sum.ln();
        let scale = pos.len() as f64 / sum;
        g.mapv_inplace(|e| e * scale);
        for &c in pos {
            let c = c as usize;
            if c >= row.len() {
                return Err(Error::IndexOutOfRange {
                    what: "positive column",
                    index: c,
                    size: row.len(),
                });
            }
            loss -= row[c] - lse;
            g[c] -= 1.0;
        }
    }
    Ok((loss, grad))
}
