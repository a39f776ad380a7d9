use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use concf::consensus::read_queue;
use concf::eval::{consensus_rankings, evaluate_lists, head_rankings, MetricsReport};
use concf::model::read_checkpoint;
use concf::trainer::deploy_consensus;
use concf::TrainConfig;

use super::load_split;
use super::train::CONFIG_NAME;
use crate::settings::{apply_file, apply_overrides, parse_list};
use crate::{EvaluateArgs, Format, Part};

/// `--config`, else `config.txt` beside the checkpoint, else defaults.
fn run_config(args: &EvaluateArgs) -> Result<(TrainConfig, bool)> {
    let mut config = TrainConfig::default();
    let sibling = args.model.parent().map(|d| d.join(CONFIG_NAME));
    let path: Option<PathBuf> = args.config.clone().or(sibling.filter(|p| p.exists()));
    let found = path.is_some();
    if let Some(p) = path {
        apply_file(&mut config, &p)?;
    }
    apply_overrides(&mut config, &args.overrides)?;
    Ok((config, found))
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let ns: Vec<usize> = parse_list(&args.ns).context("--ns")?;
    if ns.is_empty() || ns.contains(&0) {
        bail!("--ns needs positive cutoffs");
    }
    let max_n = *ns.iter().max().expect("non-empty");
    if args.consensus && args.queue.is_none() {
        bail!("consensus metrics need the snapshot queue dump (--queue)");
    }
    let (config, has_config) = run_config(args)?;

    let manifest = load_split(&args.split)?;
    let split = &manifest.split;
    let target = match args.on {
        Part::Val => &split.val,
        Part::Test => &split.test,
    };
    let params = read_checkpoint(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?
        .params;
    if params.num_users() != split.num_users() || params.num_items() != split.num_items() {
        bail!(
            "checkpoint is {}x{} but the split is {}x{}",
            params.num_users(),
            params.num_items(),
            split.num_users(),
            split.num_items()
        );
    }

    let mut heads = Vec::new();
    for &h in params.heads() {
        let lists = head_rankings(&params, h, &split.train, max_n, Some(target))?;
        heads.push((h, evaluate_lists(&lists, target, &ns)?));
    }

    let mut epoch = None;
    let consensus = match &args.queue {
        Some(path) => {
            let queue = read_queue(path).with_context(|| format!("loading {}", path.display()))?;
            epoch = queue.latest().map(|s| s.epoch() + 1);
            let cons = deploy_consensus(&params, &queue, &split.train, &config.consensus_settings())?;
            if let Some(out) = &args.export_consensus {
                cons.write_csv(out)?;
            }
            Some(evaluate_lists(&consensus_rankings(&cons, max_n), target, &ns)?)
        }
        None => None,
    };

    let report = MetricsReport::new(has_config.then_some(config.seed), epoch, &heads, consensus.as_deref());
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => report.to_csv(),
    };
    emit(args.output.as_deref(), &text)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => super::write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
