//! End-to-end use of the public API on a small planted dataset.

use concf::consensus::{read_queue, write_queue};
use concf::dataset::synthetic::PlantedFactor;
use concf::dataset::{split_user_history, SplitRatios};
use concf::model::{read_checkpoint, write_checkpoint, Checkpoint};
use concf::trainer::{deploy_consensus, Trainer};
use concf::{infer_consensus, infer_target, train, ConsensusMode, HeadId, SplitDataset, TrainConfig};

fn toy() -> SplitDataset {
    let data = PlantedFactor {
        num_users: 60,
        num_items: 80,
        rank: 4,
        mean_interactions: 15,
        ..Default::default()
    }
    .generate(9);
    split_user_history(&data, SplitRatios::default(), 5, 1, 9).unwrap()
}

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 8,
        batch_size: 64,
        period: 1,
        queue_size: 2,
        rank_cap: 80,
        list_n: 5,
        eval_n: 10,
        max_epochs: 6,
        seed,
        ..Default::default()
    }
}

fn bytes(params: &concf::ModelParams) -> Vec<u8> {
    Checkpoint { params: params.clone(), adam: None }.to_bytes()
}

#[test]
fn train_deploy_and_infer() {
    let split = toy();
    let config = small(1);
    let outcome = train(config.clone(), &split).unwrap();
    assert_eq!(outcome.head_best.len(), 5);
    assert!(outcome.best_epoch < 6);
    let queue = outcome.best_queue.as_ref().expect("joint runs keep a queue");

    let settings = config.consensus_settings();
    let cons = deploy_consensus(&outcome.best_params, queue, &split.train, &settings).unwrap();
    assert_eq!(cons.num_users(), split.num_users());
    for u in 0..split.num_users() {
        let items = cons.items(u).unwrap();
        assert!(items.iter().all(|i| !split.train.user_items(u).contains(i)));
        let top = infer_consensus(&outcome.best_params, queue, &split.train, u, 10, &settings).unwrap();
        assert_eq!(top[..], items[..top.len()]);
    }
    let top = infer_target(&outcome.best_params, HeadId::C, &split.train, 0, 10).unwrap();
    assert_eq!(top.len(), 10);
}

#[test]
fn checkpoint_and_queue_round_trip() {
    let split = toy();
    let outcome = train(small(2), &split).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let qpath = dir.path().join("q.bin");
    write_checkpoint(&ckpt, &Checkpoint { params: outcome.final_params.clone(), adam: Some(outcome.optimizer.clone()) }).unwrap();
    write_queue(&qpath, outcome.final_queue.as_ref().unwrap()).unwrap();

    let back = read_checkpoint(&ckpt).unwrap();
    assert_eq!(bytes(&back.params), bytes(&outcome.final_params));
    assert!(back.adam.is_some());
    assert_eq!(&read_queue(&qpath).unwrap(), outcome.final_queue.as_ref().unwrap());
}

#[test]
fn resume_is_bit_exact() {
    let split = toy();
    let config = small(3);
    let whole = train(config.clone(), &split).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(config, &split).unwrap();
    for _ in 0..3 {
        first.run_epoch().unwrap();
    }
    first.save_state(dir.path()).unwrap();
    drop(first);
    let mut rest = Trainer::resume(&split, dir.path()).unwrap();
    while !rest.is_done() {
        rest.run_epoch().unwrap();
    }
    let resumed = rest.finish();
    assert_eq!(bytes(&resumed.final_params), bytes(&whole.final_params));
    assert_eq!(resumed.best_epoch, whole.best_epoch);
    assert_eq!(resumed.final_queue, whole.final_queue);
}

#[test]
fn consensus_modes_share_candidates() {
    let split = toy();
    let outcome = train(small(4), &split).unwrap();
    let queue = outcome.final_queue.as_ref().unwrap();
    let base = TrainConfig { consensus_len: Some(100), ..small(4) }.consensus_settings();
    assert!(base.length >= 80);
    let rc = deploy_consensus(&outcome.final_params, queue, &split.train, &base).unwrap();
    let r_settings = concf::ConsensusSettings { mode: ConsensusMode::R, ..base };
    let r = deploy_consensus(&outcome.final_params, queue, &split.train, &r_settings).unwrap();
    for u in 0..split.num_users() {
        let mut a = rc.items(u).unwrap().to_vec();
        let mut b = r.items(u).unwrap().to_vec();
        assert_eq!(a.len(), b.len());
        a.sort_unstable();
        b.sort_unstable();
        // With 80 items and lists of 100 nothing is truncated, so both modes
        // hold the same candidates and differ only in order.
        assert_eq!(a, b);
    }
}
