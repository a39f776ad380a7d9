use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use concf::consensus::write_queue;
use concf::model::{write_checkpoint, Checkpoint};
use concf::trainer::{EpochRecord, Trainer};
use concf::{TrainConfig, TrainMode};

use super::{create_dir, load_split, write_file};
use crate::settings::{apply_file, apply_overrides, mean_std, parse_seeds};
use crate::{output_dir, TrainArgs};

pub const CONFIG_NAME: &str = "config.txt";
pub const MODEL_NAME: &str = "model.ckpt";
pub const QUEUE_NAME: &str = "queue.bin";

/// Validation results of one seed at its selected epoch.
struct SeedRow {
    seed: u64,
    best_epoch: usize,
    epochs: usize,
    heads: Vec<f64>,
    consensus: Option<f64>,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut base = TrainConfig::default();
    if let Some(path) = &args.config {
        apply_file(&mut base, path)?;
    }
    apply_overrides(&mut base, &args.overrides)?;
    base.validate()?;
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![base.seed],
    };

    let manifest = load_split(&args.split)?;
    let split = &manifest.split;
    let out = output_dir(&args.out);
    create_dir(&out)?;

    let mut rows = Vec::new();
    for &seed in &seeds {
        let config = TrainConfig { seed, ..base.clone() };
        let dir = out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        rows.push(train_seed(args, config, split, &dir)?);
    }
    print!("{}", table(&base, &rows));
    Ok(())
}

fn train_seed(args: &TrainArgs, config: TrainConfig, split: &concf::SplitDataset, dir: &Path) -> Result<SeedRow> {
    let seed = config.seed;
    let state_dir = dir.join("state");
    let mut trainer = if args.resume && state_dir.join("state.json").exists() {
        let t = Trainer::resume(split, &state_dir).with_context(|| format!("resuming from {}", state_dir.display()))?;
        if t.config() != &config {
            eprintln!("seed {seed}: resuming with the saved configuration, which differs from the requested one");
        }
        t
    } else {
        Trainer::new(config, split)?
    };
    let config = trainer.config().clone();
    while !trainer.is_done() {
        let record = trainer.run_epoch().with_context(|| format!("seed {seed}"))?;
        if args.verbose {
            eprintln!("seed {seed} {}", epoch_line(record));
        }
        if args.save_state {
            trainer.save_state(&state_dir)?;
        }
    }
    let outcome = trainer.finish();

    write_file(&dir.join(CONFIG_NAME), config.to_kv())?;
    write_checkpoint(
        dir.join(MODEL_NAME),
        &Checkpoint {
            params: outcome.best_params.clone(),
            adam: None,
        },
    )?;
    write_checkpoint(
        dir.join("final.ckpt"),
        &Checkpoint {
            params: outcome.final_params.clone(),
            adam: Some(outcome.optimizer.clone()),
        },
    )?;
    if let Some(q) = &outcome.best_queue {
        write_queue(dir.join(QUEUE_NAME), q)?;
    }
    if let Some(q) = &outcome.final_queue {
        write_queue(dir.join("final_queue.bin"), q)?;
    }
    for hb in &outcome.head_best {
        write_checkpoint(
            dir.join(format!("best_{}.ckpt", hb.head)),
            &Checkpoint {
                params: hb.params.clone(),
                adam: None,
            },
        )?;
    }
    write_file(&dir.join("history.csv"), outcome.history.to_csv())?;
    write_file(&dir.join("history.json"), outcome.history.to_json())?;

    let at_best = outcome
        .history
        .epochs
        .iter()
        .find(|e| e.epoch == outcome.best_epoch)
        .context("selected epoch missing from history")?;
    Ok(SeedRow {
        seed,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.epochs.len(),
        heads: at_best.val_recall.clone(),
        consensus: at_best.val_consensus,
    })
}

fn epoch_line(e: &EpochRecord) -> String {
    let mut s = format!("epoch {:>4}  loss {:>12.4}", e.epoch, e.total_loss);
    for r in &e.val_recall {
        let _ = write!(s, " {r:.4}");
    }
    if let Some(c) = e.val_consensus {
        let _ = write!(s, "  consensus {c:.4}");
    }
    let _ = write!(s, "  {:.2}s", e.seconds);
    s
}

fn table(config: &TrainConfig, rows: &[SeedRow]) -> String {
    let heads = match config.mode {
        TrainMode::Single(h) => vec![h],
        TrainMode::ConCF => config.heads.clone(),
    };
    let concf = matches!(config.mode, TrainMode::ConCF);
    let mut out = format!("validation R@{} at the selected epoch\n", config.eval_n);
    let _ = write!(out, "{:>6} {:>6} {:>6}", "seed", "best", "epochs");
    for h in &heads {
        let _ = write!(out, " {:>8}", format!("CF-{h}"));
    }
    if concf {
        let _ = write!(out, " {:>9}", "consensus");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:>6} {:>6} {:>6}", r.seed, r.best_epoch, r.epochs);
        for v in &r.heads {
            let _ = write!(out, " {v:>8.4}");
        }
        if concf {
            let _ = write!(out, " {:>9}", r.consensus.map_or("-".into(), |c| format!("{c:.4}")));
        }
        out.push('\n');
    }
    if rows.len() > 1 {
        let _ = write!(out, "{:>20}", "mean ± std");
        for k in 0..heads.len() {
            let (m, s) = mean_std(&rows.iter().map(|r| r.heads[k]).collect::<Vec<_>>());
            let _ = write!(out, " {m:.4}±{s:.4}");
        }
        let cons: Vec<f64> = rows.iter().filter_map(|r| r.consensus).collect();
        if concf && cons.len() == rows.len() {
            let (m, s) = mean_std(&cons);
            let _ = write!(out, " {m:.4}±{s:.4}");
        }
        out.push('\n');
    }
    out
}
