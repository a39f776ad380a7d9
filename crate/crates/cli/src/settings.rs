//! Configuration files, overrides and list arguments.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use concf::TrainConfig;

/// Applies a `key = value` file to `config`. Blank lines and `#` comments are
/// skipped; unknown keys are errors naming the line.
pub fn apply_file(config: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key = value", path.display(), n + 1))?;
        config
            .set(key.trim(), value.trim())
            .with_context(|| format!("{}:{}", path.display(), n + 1))?;
    }
    Ok(())
}

/// Applies `key=value` overrides in order.
pub fn apply_overrides(config: &mut TrainConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .with_context(|| format!("override {o:?}: expected key=value"))?;
        config.set(key.trim(), value.trim()).with_context(|| format!("override {o:?}"))?;
    }
    Ok(())
}

/// `1,2,3` or an inclusive range `1..5`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("seed range {text:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().with_context(|| format!("seed range {text:?}"))?;
        if b < a {
            bail!("empty seed range {text:?}");
        }
        return Ok((a..=b).collect());
    }
    let seeds = parse_list(text).with_context(|| format!("seeds {text:?}"))?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

/// Comma-separated values.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("{s:?}: {e}")))
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
