//! Listwise consensus-learning loss: the top-N Plackett-Luce likelihood of a
//! consensus list under a head's scores.

use rayon::prelude::*;

use crate::consensus::ConsensusList;
use crate::error::{Error, Result};
use crate::model::HeadForward;

/// Log-probability of observing the first `n` entries of a list in order,
/// given the scores of all list entries (in list order), and its gradient
/// with respect to those scores.
///
/// `log p = Σ_{k<n} [ s_k − logsumexp(s_k, …, s_{L−1}) ]`
pub fn topn_log_likelihood(scores: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    let len = scores.len();
    if n == 0 || len < n {
        return Err(Error::ListTooShort { len, n });
    }
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput(k));
    }

    // Suffix logsumexp, only the first n are needed.
    let mut lse = vec![0.0; n];
    let mut max = f64::NEG_INFINITY;
    let mut acc = 0.0; // Σ exp(s - max) over the current suffix
    for k in (0..len).rev() {
        let s = scores[k];
        if s > max {
            acc = acc * (max - s).exp() + 1.0;
            max = s;
        } else {
            acc += (s - max).exp();
        }
        if k < n {
            lse[k] = max + acc.ln();
        }
    }

    let log_p: f64 = (0..n).map(|k| scores[k] - lse[k]).sum();
    // mass_j = Σ_{k ≤ min(j, n−1)} exp(s_j − lse_k), through the running
    // sum q_k = Σ_{k' ≤ k} exp(lse_k − lse_k'), whose terms are all ≤ 1.
    let mut q = vec![0.0; n];
    for k in 0..n {
        q[k] = 1.0 + if k == 0 { 0.0 } else { q[k - 1] * (lse[k] - lse[k - 1]).exp() };
    }
    let grad = scores
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let last = j.min(n - 1);
            let mass = (s - lse[last]).exp() * q[last];
            let head = if j < n { 1.0 } else { 0.0 };
            head - mass
        })
        .collect();
    Ok((log_p, grad))
}

/// Items a [`HeadForward`] must encode to evaluate the consensus loss of
/// `users`.
pub fn consensus_items(users: &[usize], consensus: &ConsensusList) -> Result<Vec<usize>> {
    let mut items = Vec::new();
    for &u in users {
        let list = consensus.items(u).ok_or(Error::MissingConsensus(u))?;
        items.extend(list.iter().map(|&i| i as usize));
    }
    items.sort_unstable();
    items.dedup();
    Ok(items)
}

/// `−Σ_u log p(π_u[..n] | scores)` over the batch users, with the
/// gradient (times `scale`) accumulated on the head outputs of `fwd`.
///
/// Scores are relevance scores, i.e. after the head's link. A user whose
/// list is shorter than `n` uses the whole list as the prefix.
pub fn consensus_learning_loss(
    fwd: &mut HeadForward,
    users: &[usize],
    consensus: &ConsensusList,
    n: usize,
    scale: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::ListTooShort { len: 0, n });
    }
    let head = fwd.head();
    let view = &*fwd;
    let per_user: Vec<(f64, Vec<f64>)> = users
        .par_iter()
        .map(|&u| {
            let list = consensus.items(u).ok_or(Error::MissingConsensus(u))?;
            if list.is_empty() {
                return Err(Error::MissingConsensus(u));
            }
            let raw = list
                .iter()
                .map(|&i| view.raw(u, i as usize))
                .collect::<Result<Vec<_>>>()?;
            let scores: Vec<f64> = raw.iter().map(|&r| head.link(r)).collect();
            let (log_p, grad) = topn_log_likelihood(&scores, n.min(list.len()))?;
            let d_raw = grad
                .iter()
                .zip(&raw)
                .map(|(g, &r)| -g * head.link_derivative(r))
                .collect();
            Ok((-log_p, d_raw))
        })
        .collect::<Result<_>>()?;

    let mut loss = 0.0;
    for (&u, (l, d_raw)) in users.iter().zip(per_user) {
        loss += l;
        let list = consensus.items(u).expect("checked above");
        for (&i, g) in list.iter().zip(d_raw) {
            fwd.accumulate(u, i as usize, scale * g)?;
        }
    }
    Ok(loss)
}
