//! Known-place list with offline coordinates.
//!
//! File format: `name <TAB> lat <TAB> lon [<TAB> population_rank]`, one place per line.
//! Stop-lists hold one name per line and remove homographs such as adverbs that
//! happen to also be village names.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use thiserror::Error;

use crate::corpus::{tokenize, Document};
use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("read error at line {line}: {source}")]
    Read { line: usize, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerEntry {
    pub name: String,
    pub location: GeoPoint,
    pub population_rank: Option<u32>,
}

/// What happened to the lines of a gazetteer file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: usize,
    pub duplicates: usize,
    pub malformed: usize,
    pub multi_word: usize,
    pub stop_listed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: BTreeMap<String, GazetteerEntry>,
}

impl Gazetteer {
    pub fn from_entries(entries: impl IntoIterator<Item = GazetteerEntry>) -> Self {
        let mut map = BTreeMap::new();
        for e in entries {
            map.entry(e.name.clone()).or_insert(e);
        }
        Self { entries: map }
    }

    /// Parses a gazetteer; duplicates keep the first entry, malformed and multi-word lines are skipped.
    pub fn from_reader<R: BufRead>(
        reader: R,
        stop_list: &HashSet<String>,
    ) -> Result<(Self, LoadReport), GazetteerError> {
        let mut entries = BTreeMap::new();
        let mut report = LoadReport::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| GazetteerError::Read { line: i + 1, source })?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((raw_name, location, rank)) = parse_line(&line) else {
                log::warn!("gazetteer line {}: malformed, skipped", i + 1);
                report.malformed += 1;
                continue;
            };
            let tokens = tokenize(raw_name);
            let [name] = tokens.as_slice() else {
                log::warn!("gazetteer line {}: {raw_name:?} is not a single token, skipped", i + 1);
                report.multi_word += 1;
                continue;
            };
            if stop_list.contains(name) {
                report.stop_listed += 1;
                continue;
            }
            if entries.contains_key(name) {
                log::warn!("gazetteer line {}: duplicate name {name:?}, keeping first", i + 1);
                report.duplicates += 1;
                continue;
            }
            entries.insert(name.clone(), GazetteerEntry { name: name.clone(), location, population_rank: rank });
        }
        report.loaded = entries.len();
        Ok((Self { entries }, report))
    }

    pub fn get(&self, name: &str) -> Option<&GazetteerEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GazetteerEntry> {
        self.entries.values()
    }
}

fn parse_line(line: &str) -> Option<(&str, GeoPoint, Option<u32>)> {
    let mut f = line.split('\t');
    let name = f.next()?.trim();
    let lat = f.next()?.trim().parse().ok()?;
    let lon = f.next()?.trim().parse().ok()?;
    let rank = match f.next().map(str::trim) {
        None | Some("") => None,
        Some(r) => Some(r.parse::<u32>().ok().filter(|&r| r > 0)?),
    };
    if name.is_empty() || f.next().is_some() {
        return None;
    }
    Some((name, GeoPoint::new(lat, lon).ok()?, rank))
}

fn open(path: &Path) -> Result<BufReader<File>, GazetteerError> {
    File::open(path).map(BufReader::new).map_err(|source| GazetteerError::Open { path: path.to_path_buf(), source })
}

/// Reads a stop-list: one name per line, normalized the same way as gazetteer names.
pub fn load_stop_list(path: impl AsRef<Path>) -> Result<HashSet<String>, GazetteerError> {
    let mut names = HashSet::new();
    for (i, line) in open(path.as_ref())?.lines().enumerate() {
        let line = line.map_err(|source| GazetteerError::Read { line: i + 1, source })?;
        if line.starts_with('#') {
            continue;
        }
        names.extend(tokenize(&line));
    }
    Ok(names)
}

pub fn load_gazetteer(
    path: impl AsRef<Path>,
    stop_list: Option<&Path>,
) -> Result<(Gazetteer, LoadReport), GazetteerError> {
    let stop = match stop_list {
        Some(p) => load_stop_list(p)?,
        None => HashSet::new(),
    };
    Gazetteer::from_reader(open(path.as_ref())?, &stop)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerHit {
    pub location: GeoPoint,
    pub count: usize,
}

/// Gazetteer tokens found in `doc`, keyed by name in order of first occurrence.
pub fn gazetteer_hits(doc: &Document, gaz: &Gazetteer) -> IndexMap<String, GazetteerHit> {
    let mut hits: IndexMap<String, GazetteerHit> = IndexMap::new();
    for token in &doc.tokens {
        if let Some(entry) = gaz.get(token) {
            hits.entry(token.clone()).or_insert(GazetteerHit { location: entry.location, count: 0 }).count += 1;
        }
    }
    hits
}
