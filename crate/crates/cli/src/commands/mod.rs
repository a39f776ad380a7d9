pub mod analyze;
pub mod evaluate;
pub mod prepare;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use concf::dataset::{read_manifest, SplitManifest};

pub fn load_split(path: &Path) -> Result<SplitManifest> {
    read_manifest(path).with_context(|| format!("loading split manifest {}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
