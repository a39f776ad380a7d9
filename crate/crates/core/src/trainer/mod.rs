//! Joint training of the heads with warm-up, periodic ranking snapshots,
//! consensus learning, loss balancing and early stopping.
//!
//! Per epoch `t`, every batch trains each head on
//! `L_x = L_CF-x + α · L_CL-x` (the consensus term only once `t` reaches
//! the warm-up length `queue_size · period`) and the model on `Σ λ_x L_x`.
//! At the end of the epoch the model is validated and, every `period`
//! epochs, a ranking snapshot is queued and the consensus regenerated.

mod config;
mod history;
mod state;

use std::time::Instant;

use rayon::prelude::*;

use crate::balancing::BalanceState;
use crate::consensus::{generate_consensus, rank_items, ConsensusList, ConsensusSettings, RankSnapshot, SnapshotQueue};
use crate::dataset::{BatchSampler, InteractionSet, SplitDataset, TrainBatch};
use crate::error::{Error, Result};
use crate::eval::{consensus_rankings, evaluate_lists, head_rankings};
use crate::model::{Adam, FullScorer, Gradients, HeadForward, HeadId, ModelParams, ModelShape, SharingLevel};
use crate::objectives::{loss_cf_a, loss_cf_b, loss_cf_c, loss_cf_d, loss_cf_e};
use crate::ranking_loss::{consensus_items, consensus_learning_loss};

pub use config::{TrainConfig, TrainMode, CONFIG_KEYS};
pub use history::{BatchRecord, EpochRecord, TrainHistory};

const E_CHUNK: usize = 256;

/// Best validation state of one head.
#[derive(Clone, Debug)]
pub struct HeadBest {
    pub head: HeadId,
    pub epoch: usize,
    pub recall: f64,
    pub params: ModelParams,
}

#[derive(Clone, Debug)]
struct Best {
    epoch: usize,
    metric: f64,
    params: ModelParams,
    queue: Option<SnapshotQueue>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    /// Snapshot queue as it stood when the selected epoch was validated;
    /// [`infer_consensus`] on `best_params` with this queue reproduces the
    /// selected validation consensus.
    pub best_queue: Option<SnapshotQueue>,
    pub final_params: ModelParams,
    pub final_queue: Option<SnapshotQueue>,
    pub optimizer: Adam,
    pub balance: BalanceState,
    pub head_best: Vec<HeadBest>,
    pub history: TrainHistory,
}

struct BatchContext<'a> {
    train: &'a InteractionSet,
    item_users: &'a [Vec<u32>],
    all_users: &'a [usize],
    all_items: &'a [usize],
    consensus: Option<&'a ConsensusList>,
    alpha: f64,
    list_n: usize,
    margin: f64,
    cf_e_column: bool,
}

struct HeadBatch {
    cf: f64,
    cl: f64,
    grads: Gradients,
    emb_norm: f64,
}

fn head_batch(params: &ModelParams, head: HeadId, batch: &TrainBatch, ctx: &BatchContext) -> Result<HeadBatch> {
    let users = batch.users();
    let mut fwd = if head == HeadId::E {
        let encoded = if ctx.cf_e_column { ctx.all_users.to_vec() } else { users.clone() };
        HeadForward::new(params, head, &encoded, ctx.all_items)?
    } else {
        let mut items: Vec<usize> = batch.triples.iter().flat_map(|t| [t.pos, t.neg]).collect();
        if let Some(c) = ctx.consensus {
            items.extend(consensus_items(&users, c)?);
        }
        HeadForward::new(params, head, &users, &items)?
    };

    let cf = match head {
        HeadId::A | HeadId::B => {
            let pos = batch
                .triples
                .iter()
                .map(|t| fwd.raw(t.user, t.pos))
                .collect::<Result<Vec<_>>>()?;
            let neg = batch
                .triples
                .iter()
                .map(|t| fwd.raw(t.user, t.neg))
                .collect::<Result<Vec<_>>>()?;
            let lg = if head == HeadId::A {
                loss_cf_a(&pos, &neg)
            } else {
                loss_cf_b(&pos, &neg, ctx.margin)
            };
            for (t, (&gp, &gn)) in batch.triples.iter().zip(lg.grad_pos.iter().zip(&lg.grad_neg)) {
                fwd.accumulate(t.user, t.pos, gp)?;
                fwd.accumulate(t.user, t.neg, gn)?;
            }
            lg.loss
        }
        HeadId::C | HeadId::D => {
            let pairs: Vec<(usize, usize, f64)> = batch.labeled_pairs().collect();
            let raw = pairs
                .iter()
                .map(|&(u, i, _)| fwd.raw(u, i))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<f64> = pairs.iter().map(|p| p.2).collect();
            let lg = if head == HeadId::C {
                loss_cf_c(&raw, &labels)
            } else {
                loss_cf_d(&raw, &labels)
            };
            for (&(u, i, _), &g) in pairs.iter().zip(&lg.grad) {
                fwd.accumulate(u, i, g)?;
            }
            lg.loss
        }
        HeadId::E => multinomial(&mut fwd, &users, &batch.positive_items(), ctx)?,
    };

    let cl = match ctx.consensus {
        Some(c) => consensus_learning_loss(&mut fwd, &users, c, ctx.list_n, ctx.alpha)?,
        None => 0.0,
    };
    let mut grads = Gradients::zeros_like(params);
    fwd.backward(params, &mut grads)?;
    let emb_norm = grads.norm_of(&params.embedding_tensors(head)?);
    Ok(HeadBatch {
        cf,
        cl,
        grads,
        emb_norm,
    })
}

/// Row term over the batch users against all items, plus the column term
/// over the batch's positive items against all users.
fn multinomial(fwd: &mut HeadForward, users: &[usize], items: &[usize], ctx: &BatchContext) -> Result<f64> {
    let mut loss = 0.0;
    for chunk in users.chunks(E_CHUNK) {
        let logits = fwd.raw_block(chunk, ctx.all_items)?;
        let positives: Vec<&[u32]> = chunk.iter().map(|&u| ctx.train.user_items(u)).collect();
        let (l, g) = loss_cf_e(logits.view(), &positives)?;
        loss += l;
        fwd.accumulate_block(chunk, ctx.all_items, &g)?;
    }
    if ctx.cf_e_column {
        for chunk in items.chunks(E_CHUNK) {
            let logits = fwd.raw_block(ctx.all_users, chunk)?;
            let positives: Vec<&[u32]> = chunk.iter().map(|&i| ctx.item_users[i].as_slice()).collect();
            let (l, g) = loss_cf_e(logits.t(), &positives)?;
            loss += l;
            fwd.accumulate_block(ctx.all_users, chunk, &g.t().to_owned())?;
        }
    }
    Ok(loss)
}

/// Step-by-step training driver. [`train`] runs it to completion.
pub struct Trainer<'a> {
    config: TrainConfig,
    split: &'a SplitDataset,
    heads: Vec<HeadId>,
    params: ModelParams,
    adam: Adam,
    balance: BalanceState,
    queue: Option<SnapshotQueue>,
    consensus: Option<ConsensusList>,
    sampler: BatchSampler<'a>,
    item_users: Vec<Vec<u32>>,
    all_users: Vec<usize>,
    all_items: Vec<usize>,
    history: TrainHistory,
    next_epoch: usize,
    best: Option<Best>,
    head_best: Vec<Option<HeadBest>>,
    stopped: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, split: &'a SplitDataset) -> Result<Self> {
        config.validate()?;
        if split.val.is_empty() {
            return Err(Error::Config("the validation split is empty".into()));
        }
        let heads = config.active_heads();
        let sharing = match config.mode {
            // A lone head is named like an unshared head of a joint model.
            TrainMode::Single(_) => SharingLevel::NoSharing,
            TrainMode::ConCF => config.sharing,
        };
        let params = ModelParams::init(
            ModelShape {
                num_users: split.num_users(),
                num_items: split.num_items(),
                dim: config.dim,
                sharing,
                heads: heads.clone(),
            },
            config.seed,
        )?;
        let mut adam = Adam::new(&params);
        adam.weight_decay = config.weight_decay;
        let balance = BalanceState::new(heads.len(), config.balance)?;
        let queue = match config.mode {
            TrainMode::ConCF => Some(SnapshotQueue::new(config.queue_size, config.period, config.rank_cap)?),
            TrainMode::Single(_) => None,
        };
        let sampler = BatchSampler::new(&split.train, config.batch_size, sampler_seed(config.seed))?;
        let history = TrainHistory {
            heads: heads.clone(),
            eval_n: config.eval_n,
            ..Default::default()
        };
        Ok(Self {
            head_best: vec![None; heads.len()],
            heads,
            params,
            adam,
            balance,
            queue,
            consensus: None,
            sampler,
            item_users: split.train.item_users(),
            all_users: (0..split.num_users()).collect(),
            all_items: (0..split.num_items()).collect(),
            history,
            next_epoch: 0,
            best: None,
            stopped: false,
            config,
            split,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn queue(&self) -> Option<&SnapshotQueue> {
        self.queue.as_ref()
    }

    pub fn consensus(&self) -> Option<&ConsensusList> {
        self.consensus.as_ref()
    }

    pub fn balance(&self) -> &BalanceState {
        &self.balance
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    /// True once early stopping fired or the epoch budget is spent.
    pub fn is_done(&self) -> bool {
        self.stopped || self.next_epoch >= self.config.max_epochs
    }

    /// Whether epoch `t` trains with the consensus loss.
    fn consensus_active(&self, t: usize) -> bool {
        matches!(self.config.mode, TrainMode::ConCF) && t >= self.config.warmup_epochs() && self.config.alpha > 0.0
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let t = self.next_epoch;
        let started = Instant::now();
        let active = self.consensus_active(t);
        if active && self.consensus.is_none() {
            return Err(Error::QueueNotReady {
                have: self.queue.as_ref().map_or(0, |q| q.len()),
                need: self.config.queue_size,
            });
        }
        let n_heads = self.heads.len();
        let mut cf_sum = vec![0.0; n_heads];
        let mut cl_sum = vec![0.0; n_heads];
        let mut total_sum = 0.0;

        for (b, batch) in self.sampler.epoch(t).iter().enumerate() {
            let ctx = BatchContext {
                train: &self.split.train,
                item_users: &self.item_users,
                all_users: &self.all_users,
                all_items: &self.all_items,
                consensus: if active { self.consensus.as_ref() } else { None },
                alpha: self.config.alpha,
                list_n: self.config.list_n,
                margin: self.config.margin,
                cf_e_column: self.config.cf_e_column,
            };
            let params = &self.params;
            let results = self
                .heads
                .par_iter()
                .map(|&h| head_batch(params, h, batch, &ctx))
                .collect::<Result<Vec<_>>>()?;

            let context = || format!("epoch {t}, batch {b}");
            for (&head, r) in self.heads.iter().zip(&results) {
                if !r.cf.is_finite() || !r.cl.is_finite() {
                    return Err(Error::NonFinite {
                        what: "loss",
                        head,
                        context: context(),
                    });
                }
                if r.grads.first_non_finite().is_some() {
                    return Err(Error::NonFinite {
                        what: "gradient",
                        head,
                        context: context(),
                    });
                }
            }

            let lambda = self.balance.lambda().to_vec();
            let losses: Vec<f64> = results.iter().map(|r| r.cf + self.config.alpha * r.cl).collect();
            let total: f64 = lambda.iter().zip(&losses).map(|(l, x)| l * x).sum();
            let mut combined = Gradients::zeros_like(&self.params);
            for (r, &l) in results.iter().zip(&lambda) {
                combined.add_scaled(&r.grads, l);
            }
            let norms: Vec<f64> = results.iter().map(|r| r.emb_norm).collect();
            self.balance.step(&losses, &norms)?;
            self.adam.apply(&mut self.params, &combined, self.config.lr)?;

            let cf: Vec<f64> = results.iter().map(|r| r.cf).collect();
            let cl: Vec<f64> = results.iter().map(|r| r.cl).collect();
            for k in 0..n_heads {
                cf_sum[k] += cf[k];
                cl_sum[k] += cl[k];
            }
            total_sum += total;
            self.history.batches.push(BatchRecord {
                epoch: t,
                batch: b,
                cf_loss: cf,
                cl_loss: cl,
                lambda,
                total,
            });
        }

        let (val_recall, val_consensus) = self.validate_and_snapshot(t)?;
        self.next_epoch = t + 1;

        let seconds = started.elapsed().as_secs_f64();
        self.history.wall_clock += seconds;
        self.history.epochs.push(EpochRecord {
            epoch: t,
            cf_loss: cf_sum,
            cl_loss: cl_sum,
            lambda: self.balance.lambda().to_vec(),
            total_loss: total_sum,
            consensus_active: active,
            val_recall,
            val_consensus,
            seconds,
        });
        Ok(self.history.epochs.last().expect("just pushed"))
    }

    /// Validates the parameters after epoch `t`, updates the selection and
    /// pushes a snapshot when `t` is a snapshot epoch.
    fn validate_and_snapshot(&mut self, t: usize) -> Result<(Vec<f64>, Option<f64>)> {
        let n = self.config.eval_n;
        let val = &self.split.val;
        let train = &self.split.train;
        let (val_recall, val_consensus, fresh) = match self.config.mode {
            TrainMode::Single(head) => {
                let lists = head_rankings(&self.params, head, train, n, Some(val))?;
                (vec![evaluate_lists(&lists, val, &[n])?[0].recall], None, None)
            }
            TrainMode::ConCF => {
                let queue = self.queue.as_ref().expect("joint mode has a queue");
                let snap = RankSnapshot::compute(&self.params, &self.heads, train, self.config.rank_cap, t)?;
                let mut recalls = Vec::with_capacity(self.heads.len());
                for slot in 0..self.heads.len() {
                    let lists: Vec<Vec<u32>> = (0..train.num_users())
                        .map(|u| {
                            let l = snap.list(slot, u);
                            l[..l.len().min(n)].to_vec()
                        })
                        .collect();
                    recalls.push(evaluate_lists(&lists, val, &[n])?[0].recall);
                }
                let (cons_recall, cons) = if queue.len() + 1 >= queue.capacity() {
                    let mut probe = queue.clone();
                    probe.push_final(snap.clone())?;
                    let cons = generate_consensus(&probe, &self.config.consensus_settings())?;
                    let recall = evaluate_lists(&consensus_rankings(&cons, n), val, &[n])?[0].recall;
                    (Some(recall), Some(cons))
                } else {
                    (None, None)
                };
                (recalls, cons_recall, Some((snap, cons)))
            }
        };

        for (slot, &head) in self.heads.iter().enumerate() {
            let r = val_recall[slot];
            if self.head_best[slot].as_ref().map_or(true, |b| r > b.recall) {
                self.head_best[slot] = Some(HeadBest {
                    head,
                    epoch: t,
                    recall: r,
                    params: self.params.clone(),
                });
            }
        }

        let selection = match self.config.mode {
            TrainMode::Single(_) => Some(val_recall[0]),
            TrainMode::ConCF if t >= self.config.warmup_epochs() => val_consensus,
            TrainMode::ConCF => None,
        };
        if let Some(metric) = selection {
            if self.best.as_ref().map_or(true, |b| metric > b.metric) {
                self.best = Some(Best {
                    epoch: t,
                    metric,
                    params: self.params.clone(),
                    queue: self.queue.clone(),
                });
                self.history.best_epoch = Some(t);
                self.history.best_metric = Some(metric);
            }
        }
        if let Some(best) = &self.best {
            if t - best.epoch >= self.config.patience {
                self.stopped = true;
            }
        }

        if let Some((snap, cons)) = fresh {
            if t % self.config.period == 0 {
                let queue = self.queue.as_mut().expect("joint mode has a queue");
                queue.push(snap)?;
                if queue.is_full() {
                    // The probe queue above is identical to the updated queue.
                    self.consensus = Some(match cons {
                        Some(c) => c,
                        None => generate_consensus(queue, &self.config.consensus_settings())?,
                    });
                }
            }
        }
        Ok((val_recall, val_consensus))
    }

    pub fn finish(self) -> TrainOutcome {
        let last = self.next_epoch.saturating_sub(1);
        let (best_params, best_epoch, best_queue) = match self.best {
            Some(b) => (b.params, b.epoch, b.queue),
            None => (self.params.clone(), last, self.queue.clone()),
        };
        TrainOutcome {
            best_params,
            best_epoch,
            best_queue,
            final_params: self.params,
            final_queue: self.queue,
            optimizer: self.adam,
            balance: self.balance,
            head_best: self.head_best.into_iter().flatten().collect(),
            history: self.history,
        }
    }
}

fn sampler_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Trains to completion (early stop or epoch budget).
pub fn train(config: TrainConfig, split: &SplitDataset) -> Result<TrainOutcome> {
    train_with(config, split, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    config: TrainConfig,
    split: &SplitDataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, split)?;
    while !trainer.is_done() {
        on_epoch(trainer.run_epoch()?);
    }
    Ok(trainer.finish())
}

/// Top-`n` items of one head for `user`, train positives excluded.
pub fn infer_target(params: &ModelParams, head: HeadId, train: &InteractionSet, user: usize, n: usize) -> Result<Vec<u32>> {
    if user >= params.num_users() || user >= train.num_users() {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: user,
            size: params.num_users(),
        });
    }
    let scores = FullScorer::new(params, head)?.scores(&[user])?;
    let row = scores.row(0).to_vec();
    rank_items(&row, train.user_items(user), n).map_err(|_| Error::NonFiniteScore { head, user })
}

/// Consensus lists for every user from `queue` after pushing a fresh
/// snapshot of `params` (evicting the oldest).
pub fn deploy_consensus(
    params: &ModelParams,
    queue: &SnapshotQueue,
    train: &InteractionSet,
    settings: &ConsensusSettings,
) -> Result<ConsensusList> {
    let latest = queue.latest().ok_or(Error::QueueNotReady {
        have: 0,
        need: queue.capacity(),
    })?;
    if queue.len() + 1 < queue.capacity() {
        return Err(Error::QueueNotReady {
            have: queue.len(),
            need: queue.capacity() - 1,
        });
    }
    let snap = RankSnapshot::compute(params, latest.heads(), train, queue.cap(), latest.epoch() + 1)?;
    let mut q = queue.clone();
    q.push_final(snap)?;
    generate_consensus(&q, settings)
}

/// Top-`n` consensus items for `user`; see [`deploy_consensus`].
pub fn infer_consensus(
    params: &ModelParams,
    queue: &SnapshotQueue,
    train: &InteractionSet,
    user: usize,
    n: usize,
    settings: &ConsensusSettings,
) -> Result<Vec<u32>> {
    let cons = deploy_consensus(params, queue, train, settings)?;
    let items = cons.items(user).ok_or(Error::IndexOutOfRange {
        what: "user",
        index: user,
        size: cons.num_users(),
    })?;
    Ok(items[..items.len().min(n)].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::ConsensusMode;
    use crate::dataset::synthetic::PlantedFactor;
    use crate::dataset::{split_user_history, SplitRatios};

    fn small_split() -> SplitDataset {
        let data = PlantedFactor {
            num_users: 40,
            num_items: 60,
            rank: 4,
            mean_interactions: 14,
            ..Default::default()
        }
        .generate(3);
        split_user_history(&data, SplitRatios::default(), 5, 1, 9).unwrap()
    }

    fn small_config(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            alpha: 0.5,
            list_n: 5,
            period: 2,
            queue_size: 2,
            rank_cap: 30,
            lr: 0.01,
            batch_size: 64,
            dim: 8,
            max_epochs: 8,
            patience: 100,
            eval_n: 10,
            ..Default::default()
        }
    }

    #[test]
    fn warm_up_then_consensus_learning() {
        let split = small_split();
        let out = train(small_config(TrainMode::ConCF), &split).unwrap();
        let h = &out.history;
        assert_eq!(h.epochs.len(), 8);
        for e in &h.epochs {
            assert_eq!(e.consensus_active, e.epoch >= 4, "epoch {}", e.epoch);
            if e.consensus_active {
                assert!(e.cl_loss.iter().all(|&l| l > 0.0));
            } else {
                assert!(e.cl_loss.iter().all(|&l| l == 0.0));
            }
            // queue of two snapshots at period 2 is full from epoch 2 on
            assert_eq!(e.val_consensus.is_some(), e.epoch >= 1, "epoch {}", e.epoch);
        }
        assert_eq!(out.final_queue.as_ref().unwrap().epochs(), vec![4, 6]);
        assert!(out.best_epoch >= 4);
    }

    #[test]
    fn total_loss_matches_components() {
        let split = small_split();
        let cfg = small_config(TrainMode::ConCF);
        let alpha = cfg.alpha;
        let out = train(cfg, &split).unwrap();
        for b in &out.history.batches {
            let recomputed: f64 = (0..b.lambda.len())
                .map(|k| b.lambda[k] * (b.cf_loss[k] + alpha * b.cl_loss[k]))
                .sum();
            assert!((recomputed - b.total).abs() <= 1e-9 * b.total.abs().max(1.0));
            assert!((b.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_keeps_unit_weight() {
        let split = small_split();
        let out = train(small_config(TrainMode::Single(HeadId::B)), &split).unwrap();
        assert!(out.final_queue.is_none());
        assert_eq!(out.final_params.heads(), &[HeadId::B]);
        assert!(out.history.batches.iter().all(|b| b.lambda == vec![1.0]));
        assert!(out.history.epochs.iter().all(|e| e.val_consensus.is_none()));
    }

    #[test]
    fn best_parameters_reproduce_logged_metric() {
        let split = small_split();
        let out = train(small_config(TrainMode::Single(HeadId::A)), &split).unwrap();
        let best = out.history.best_metric.unwrap();
        let lists = head_rankings(&out.best_params, HeadId::A, &split.train, 10, Some(&split.val)).unwrap();
        assert_eq!(evaluate_lists(&lists, &split.val, &[10]).unwrap()[0].recall, best);
        let logged = &out.history.epochs[out.best_epoch];
        assert_eq!(logged.val_recall[0], best);

        let cfg = small_config(TrainMode::ConCF);
        let settings = cfg.consensus_settings();
        let out = train(cfg, &split).unwrap();
        let cons = deploy_consensus(&out.best_params, out.best_queue.as_ref().unwrap(), &split.train, &settings).unwrap();
        let r = evaluate_lists(&consensus_rankings(&cons, 10), &split.val, &[10]).unwrap()[0].recall;
        assert_eq!(Some(r), out.history.best_metric);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let split = small_split();
        let cfg = TrainConfig {
            patience: 2,
            max_epochs: 60,
            lr: 0.05,
            ..small_config(TrainMode::Single(HeadId::D))
        };
        let out = train(cfg, &split).unwrap();
        let last = out.history.last_epoch().unwrap();
        let best = out.history.best_epoch.unwrap();
        if last < 59 {
            assert_eq!(last - best, 2);
        }
        let best_metric = out.history.best_metric.unwrap();
        for e in &out.history.epochs {
            assert!(e.val_recall[0] <= best_metric);
        }
    }

    #[test]
    fn infer_target_ranks_head_scores() {
        let split = small_split();
        let cfg = TrainConfig {
            max_epochs: 2,
            ..small_config(TrainMode::Single(HeadId::C))
        };
        let out = train(cfg, &split).unwrap();
        let p = &out.best_params;
        for u in [0, 7, 39] {
            let top = infer_target(p, HeadId::C, &split.train, u, 15).unwrap();
            let scores = p.score_batch(HeadId::C, &[u], None).unwrap();
            let expected = rank_items(&scores.row(0).to_vec(), split.train.user_items(u), 15).unwrap();
            assert_eq!(top, expected);
            assert!(top.iter().all(|&i| !split.train.contains(u, i as usize)));
            assert_eq!(top, infer_target(p, HeadId::C, &split.train, u, 15).unwrap());
        }
        assert!(infer_target(p, HeadId::C, &split.train, 40, 5).is_err());
        assert!(infer_target(p, HeadId::A, &split.train, 0, 5).is_err());
    }

    #[test]
    fn consensus_inference_needs_a_filled_queue() {
        let split = small_split();
        let cfg = small_config(TrainMode::ConCF);
        let settings = cfg.consensus_settings();
        let out = train(cfg, &split).unwrap();
        let q = out.final_queue.as_ref().unwrap();
        let top = infer_consensus(&out.final_params, q, &split.train, 3, 10, &settings).unwrap();
        assert_eq!(top.len(), 10);
        assert!(top.iter().all(|&i| !split.train.contains(3, i as usize)));

        let empty = SnapshotQueue::new(3, 2, 30).unwrap();
        assert!(matches!(
            infer_consensus(&out.final_params, &empty, &split.train, 3, 10, &settings),
            Err(Error::QueueNotReady { .. })
        ));
        let r_only = ConsensusSettings {
            mode: ConsensusMode::R,
            ..settings
        };
        assert_eq!(
            infer_consensus(&out.final_params, q, &split.train, 3, 10, &r_only).unwrap().len(),
            10
        );
    }

    #[test]
    fn resume_continues_bit_exactly() {
        let split = small_split();
        let cfg = small_config(TrainMode::ConCF);
        let straight = train(cfg.clone(), &split).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut first = Trainer::new(cfg, &split).unwrap();
        for _ in 0..5 {
            first.run_epoch().unwrap();
        }
        first.save_state(dir.path()).unwrap();
        drop(first);
        let mut resumed = Trainer::resume(&split, dir.path()).unwrap();
        assert_eq!(resumed.next_epoch(), 5);
        while !resumed.is_done() {
            resumed.run_epoch().unwrap();
        }
        let out = resumed.finish();
        assert_eq!(out.final_params, straight.final_params);
        assert_eq!(out.best_params, straight.best_params);
        assert_eq!(out.history.batches, straight.history.batches);
        assert_eq!(out.final_queue, straight.final_queue);
    }

    #[test]
    fn divergence_is_reported_with_context() {
        let split = small_split();
        let cfg = TrainConfig {
            lr: 1e300,
            max_epochs: 3,
            ..small_config(TrainMode::Single(HeadId::D))
        };
        match train(cfg, &split) {
            Err(Error::NonFinite { head, context, .. }) => {
                assert_eq!(head, HeadId::D);
                assert!(context.starts_with("epoch "), "{context}");
            }
            Err(Error::NonFiniteScore { head, .. }) => assert_eq!(head, HeadId::D),
            other => panic!("expected a non-finite error, got {:?}", other.map(|o| o.best_epoch)),
        }
    }
}
