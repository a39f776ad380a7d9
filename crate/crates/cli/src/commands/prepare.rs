use anyhow::{bail, Context, Result};
use concf::dataset::synthetic::PlantedFactor;
use concf::dataset::{load_interactions, split_user_history, stats_line, write_manifest, Delimiter, SplitManifest, SplitRatios};

use super::create_dir;
use crate::settings::parse_list;
use crate::{output_dir, PrepareArgs};

pub const MANIFEST_NAME: &str = "split.manifest";

pub fn run(args: &PrepareArgs) -> Result<()> {
    let ratios: Vec<f64> = parse_list(&args.ratios).context("--ratios")?;
    let [train, val, test] = ratios[..] else {
        bail!("--ratios needs three values, got {}", ratios.len());
    };
    let ratios = SplitRatios { train, val, test };

    let (data, users, items) = if args.synthetic {
        (PlantedFactor::default().generate(args.seed), None, None)
    } else {
        let path = args.input.as_ref().expect("clap requires --input without --synthetic");
        let delimiter: Delimiter = args.delimiter.parse().map_err(anyhow::Error::msg)?;
        let loaded = load_interactions(path, delimiter).with_context(|| format!("loading {}", path.display()))?;
        (loaded.interactions, Some(loaded.users), Some(loaded.items))
    };

    let split = split_user_history(&data, ratios, args.min_user, args.min_item, args.seed)?;
    let mut manifest = SplitManifest::with_index_ids(split);
    if let (Some(u), Some(i)) = (users, items) {
        manifest.users = u;
        manifest.items = i;
    }

    let dir = output_dir(&args.out);
    create_dir(&dir)?;
    let path = dir.join(MANIFEST_NAME);
    write_manifest(&path, &manifest)?;

    let s = &manifest.split;
    println!("{}", stats_line(&data));
    println!(
        "split seed {}: {} train, {} validation, {} test interactions",
        s.split_seed,
        s.train.len(),
        s.val.len(),
        s.test.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}
