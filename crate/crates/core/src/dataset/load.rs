use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::InteractionSet;
use crate::error::{Error, Result};

/// Column separator of an interaction file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Delimiter {
    /// Tab if the first data line contains one, otherwise comma.
    #[default]
    Auto,
    Tab,
    Comma,
}

impl Delimiter {
    fn resolve(self, first_line: &str) -> char {
        match self {
            Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
            Delimiter::Auto if first_line.contains('\t') => '\t',
            Delimiter::Auto => ',',
        }
    }
}

impl std::str::FromStr for Delimiter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "tab" | "\\t" => Ok(Delimiter::Tab),
            "comma" | "," => Ok(Delimiter::Comma),
            other => Err(format!("unknown delimiter {other:?} (expected auto, tab or comma)")),
        }
    }
}

/// Raw id ↔ dense index mapping, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_ids(ids: Vec<String>) -> Self {
        let lookup = ids.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        Self { ids, lookup }
    }

    fn intern(&mut self, raw: &str) -> usize {
        if let Some(&k) = self.lookup.get(raw) {
            return k;
        }
        let k = self.ids.len();
        self.ids.push(raw.to_owned());
        self.lookup.insert(raw.to_owned(), k);
        k
    }

    pub fn index_of(&self, raw: &str) -> Option<usize> {
        self.lookup.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LoadedInteractions {
    pub interactions: InteractionSet,
    pub users: IdMap,
    pub items: IdMap,
}

/// Reads `user<sep>item[<sep>extra...]` lines. Extra columns (ratings,
/// timestamps) are ignored; every listed pair counts as an interaction.
pub fn load_interactions(path: impl AsRef<Path>, delimiter: Delimiter) -> Result<LoadedInteractions> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut pairs = Vec::new();
    let mut sep = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let sep = *sep.get_or_insert_with(|| delimiter.resolve(line));
        let mut cols = line.split(sep);
        let (Some(u), Some(i)) = (cols.next(), cols.next()) else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                reason: format!("expected at least two {sep:?}-separated columns"),
            });
        };
        let (u, i) = (u.trim(), i.trim());
        if u.is_empty() || i.is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                reason: "empty user or item id".into(),
            });
        }
        pairs.push((users.intern(u), items.intern(i)));
    }

    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let interactions = InteractionSet::from_pairs(users.len(), items.len(), pairs)?;
    Ok(LoadedInteractions {
        interactions,
        users,
        items,
    })
}
