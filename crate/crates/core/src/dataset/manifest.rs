//! Split manifest: a plain-text, line-oriented record of a train/val/test split.
//!
//! ```text
//! concf-split v1
//! seed <u64>
//! users <count>
//! items <count>
//! [users]
//! <raw user id>        one line per dense index, in index order
//! [items]
//! <raw item id>
//! [train]
//! <user index>\t<item index>
//! [val]
//! ...
//! [test]
//! ...
//! ```
//!
//! Pairs within each section are written in `(user, item)` order, so the
//! same split always produces the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{IdMap, InteractionSet, SplitDataset};
use crate::error::{Error, Result};

const HEADER: &str = "concf-split v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub split: SplitDataset,
    pub users: IdMap,
    pub items: IdMap,
}

impl SplitManifest {
    /// Manifest with identity id maps (`"0"`, `"1"`, ...).
    pub fn with_index_ids(split: SplitDataset) -> Self {
        let ids = |n: usize| IdMap::from_ids((0..n).map(|k| k.to_string()).collect());
        Self {
            users: ids(split.num_users()),
            items: ids(split.num_items()),
            split,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let s = &self.split;
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "seed {}", s.split_seed);
        let _ = writeln!(out, "users {}", s.num_users());
        let _ = writeln!(out, "items {}", s.num_items());
        for (section, ids) in [("users", &self.users), ("items", &self.items)] {
            let _ = writeln!(out, "[{section}]");
            for id in ids.ids() {
                if id.contains(['\n', '\r']) || id.starts_with('[') {
                    return Err(Error::Format(format!("id {id:?} cannot be stored in a manifest")));
                }
                let _ = writeln!(out, "{id}");
            }
        }
        for (section, set) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
            let _ = writeln!(out, "[{section}]");
            for (u, i) in set.pairs() {
                let _ = writeln!(out, "{u}\t{i}");
            }
        }
        Ok(out)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: path.to_owned(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));

        let mut next = |expect: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {expect}")))?;
            Ok((n, l.to_owned()))
        };
        let (n, head) = next("header")?;
        if head != HEADER {
            return Err(err(n, format!("expected {HEADER:?}")));
        }
        let mut field = |name: &str| -> Result<u64> {
            let (n, l) = next(name)?;
            l.strip_prefix(name)
                .and_then(|v| v.strip_prefix(' '))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(n, format!("expected `{name} <number>`")))
        };
        let seed = field("seed")?;
        let nu = field("users")? as usize;
        let ni = field("items")? as usize;

        let mut section = String::new();
        let mut user_ids = Vec::with_capacity(nu);
        let mut item_ids = Vec::with_capacity(ni);
        let mut pairs: [Vec<(usize, usize)>; 3] = Default::default();
        for (n, line) in text.lines().enumerate().skip(4).map(|(k, l)| (k + 1, l)) {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.to_owned();
                continue;
            }
            match section.as_str() {
                "users" => user_ids.push(line.to_owned()),
                "items" => item_ids.push(line.to_owned()),
                "train" | "val" | "test" => {
                    let (u, i) = line
                        .split_once('\t')
                        .and_then(|(u, i)| Some((u.parse().ok()?, i.parse().ok()?)))
                        .ok_or_else(|| err(n, "expected `<user>\\t<item>`".into()))?;
                    let k = match section.as_str() {
                        "train" => 0,
                        "val" => 1,
                        _ => 2,
                    };
                    pairs[k].push((u, i));
                }
                other => return Err(err(n, format!("unknown section [{other}]"))),
            }
        }
        if user_ids.len() != nu || item_ids.len() != ni {
            return Err(err(
                0,
                format!(
                    "id tables hold {} users / {} items, header says {nu} / {ni}",
                    user_ids.len(),
                    item_ids.len()
                ),
            ));
        }
        let [train, val, test] = pairs;
        let build = |p: Vec<(usize, usize)>| InteractionSet::from_pairs(nu, ni, p);
        Ok(Self {
            split: SplitDataset {
                train: build(train)?,
                val: build(val)?,
                test: build(test)?,
                split_seed: seed,
            },
            users: IdMap::from_ids(user_ids),
            items: IdMap::from_ids(item_ids),
        })
    }
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &SplitManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_text()?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SplitManifest::parse(path, &text)
}
