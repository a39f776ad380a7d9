use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use concf::eval::{cdf_csv, chr, head_rankings, per_matrix_csv, user_chr_cdf, HitSet};
use concf::model::read_checkpoint;
use concf::HeadId;

use super::{create_dir, load_split, write_file};
use crate::{output_dir, AnalyzeArgs};

/// Splits `path:HEAD`; a suffix that is not a head name is part of the path.
fn parse_member(spec: &str) -> (&str, Option<HeadId>) {
    if let Some((path, head)) = spec.rsplit_once(':') {
        if let Ok(h) = head.parse::<HeadId>() {
            return (path, Some(h));
        }
    }
    (spec, None)
}

fn tag_of(path: &str, head: HeadId) -> String {
    let p = Path::new(path);
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let parent = p
        .parent()
        .and_then(|d| d.file_name())
        .map(|s| s.to_string_lossy().into_owned());
    let base = match parent {
        Some(d) if !d.is_empty() => format!("{d}/{stem}"),
        _ => stem,
    };
    format!("{base}:{head}")
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    if args.k == 0 {
        bail!("--k must be positive");
    }
    let manifest = load_split(&args.split)?;
    let split = &manifest.split;

    let mut family: Vec<HitSet> = Vec::new();
    for spec in &args.models {
        let (path, head) = parse_member(spec);
        let params = read_checkpoint(path).with_context(|| format!("loading {path}"))?.params;
        let heads: Vec<HeadId> = match head {
            Some(h) => {
                params.slot(h).with_context(|| format!("{path} has no head {h}"))?;
                vec![h]
            }
            None => params.heads().to_vec(),
        };
        for h in heads {
            let lists = head_rankings(&params, h, &split.train, args.k, Some(&split.test))?;
            let mut tag = tag_of(path, h);
            while family.iter().any(|m| m.tag == tag) {
                tag.push('\'');
            }
            family.push(HitSet::from_lists(tag, &lists, &split.test, args.k)?);
        }
    }

    let dir = output_dir(&args.out);
    create_dir(&dir)?;
    let refs: Vec<&HitSet> = family.iter().collect();
    write_file(&dir.join("per.csv"), per_matrix_csv(&refs))?;

    let mut table = String::from("model,hits,chr\n");
    for m in &family {
        let value = chr(m, &refs).map_or(String::new(), |v| format!("{v:.6}"));
        let _ = writeln!(table, "{},{},{value}", m.tag, m.len());
    }
    write_file(&dir.join("chr.csv"), &table)?;
    print!("{table}");

    if family.len() >= 2 {
        for (k, m) in family.iter().enumerate() {
            write_file(&dir.join(format!("chr_cdf_{k}.csv")), cdf_csv(&user_chr_cdf(m, &refs)?))?;
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}
