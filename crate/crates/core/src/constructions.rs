//! Locational constructions: short token patterns with one location slot.
//!
//! Constructions are bootstrapped from the contexts of gazetteer names, ranked
//! by how many of the words they capture elsewhere have high placeness, and then
//! used as a filter that keeps only slot fillers of a text.
//!
//! Around each anchor token three window shapes are tabulated:
//! `6+0` (up to six tokens before the slot), `0+6` (up to six after) and `3+3`
//! (one to three tokens on *both* sides). Every contiguous sub-window touching
//! the slot is counted, so `bor i <location>` and `jag bor i <location>` are both
//! candidates. Windows never cross post boundaries.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::Document;
use crate::gazetteer::Gazetteer;
use crate::wordmodel::{ModelStore, WordModel};

/// Text form of the slot inside a rendered pattern.
pub const SLOT: &str = "<location>";

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("no gazetteer token occurs in the corpus; nothing to anchor constructions on")]
    NoAnchors,
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("constructions file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowShape {
    /// `6+0`
    Before,
    /// `3+3`
    Around,
    /// `0+6`
    After,
}

impl WindowShape {
    pub const ALL: [WindowShape; 3] = [WindowShape::Before, WindowShape::Around, WindowShape::After];

    /// `(before, after)` context lengths of every sub-window of this shape that fits
    /// around a slot with `left` tokens before it and `right` after it.
    fn spans(self, left: usize, right: usize) -> Vec<(usize, usize)> {
        match self {
            WindowShape::Before => (1..=left.min(6)).map(|m| (m, 0)).collect(),
            WindowShape::After => (1..=right.min(6)).map(|m| (0, m)).collect(),
            WindowShape::Around => (1..=left.min(3)).flat_map(|a| (1..=right.min(3)).map(move |b| (a, b))).collect(),
        }
    }
}

impl fmt::Display for WindowShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowShape::Before => "6+0",
            WindowShape::Around => "3+3",
            WindowShape::After => "0+6",
        })
    }
}

impl FromStr for WindowShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "6+0" => Ok(WindowShape::Before),
            "3+3" => Ok(WindowShape::Around),
            "0+6" => Ok(WindowShape::After),
            other => Err(format!("unknown window shape {other:?}")),
        }
    }
}

/// Context tokens on each side of the slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    pub before: Vec<String>,
    pub after: Vec<String>,
}

impl Pattern {
    pub fn new<S: Into<String>>(before: impl IntoIterator<Item = S>, after: impl IntoIterator<Item = S>) -> Self {
        Self {
            before: before.into_iter().map(Into::into).collect(),
            after: after.into_iter().map(Into::into).collect(),
        }
    }

    pub fn shape(&self) -> WindowShape {
        match (self.before.is_empty(), self.after.is_empty()) {
            (false, true) => WindowShape::Before,
            (true, false) => WindowShape::After,
            _ => WindowShape::Around,
        }
    }

    /// Length including the slot.
    pub fn len(&self) -> usize {
        self.before.len() + 1 + self.after.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn at(tokens: &[String], i: usize, (b, a): (usize, usize)) -> Self {
        Self { before: tokens[i - b..i].to_vec(), after: tokens[i + 1..i + 1 + a].to_vec() }
    }

    /// Does the pattern match with its slot at `tokens[i]`?
    pub fn matches_at(&self, tokens: &[String], i: usize) -> bool {
        i >= self.before.len()
            && i + self.after.len() < tokens.len()
            && tokens[i - self.before.len()..i] == self.before[..]
            && tokens[i + 1..i + 1 + self.after.len()] == self.after[..]
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> =
            self.before.iter().map(String::as_str).chain([SLOT]).chain(self.after.iter().map(String::as_str)).collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tokens: Vec<&str> = s.split(' ').filter(|t| !t.is_empty()).collect();
        let slots: Vec<usize> = tokens.iter().enumerate().filter(|(_, t)| **t == SLOT).map(|(i, _)| i).collect();
        let [slot] = slots.as_slice() else {
            return Err(format!("pattern {s:?} must contain exactly one {SLOT}"));
        };
        let p = Pattern::new(tokens[..*slot].iter().copied(), tokens[slot + 1..].iter().copied());
        if p.before.is_empty() && p.after.is_empty() {
            return Err(format!("pattern {s:?} has no context"));
        }
        if p.len() > 7 {
            return Err(format!("pattern {s:?} is longer than seven tokens"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub pattern: Pattern,
    /// Anchor occurrences whose window contained the pattern.
    pub frequency: u64,
    /// Fraction of distinct slot fillers, corpus-wide, with high placeness.
    pub yield_score: f64,
}

impl Construction {
    pub fn shape(&self) -> WindowShape {
        self.pattern.shape()
    }
}

/// Sub-windows around `tokens[i]`, one per distinct pattern.
fn windows(tokens: &[String], i: usize, shapes: &[WindowShape]) -> impl Iterator<Item = (usize, usize)> {
    let (left, right) = (i, tokens.len() - 1 - i);
    shapes.iter().flat_map(move |s| s.spans(left, right)).collect::<BTreeSet<_>>().into_iter()
}

/// Pattern frequencies around gazetteer anchors. Tables from separate shards can be merged.
#[derive(Debug, Clone, Default)]
pub struct WindowTable {
    counts: HashMap<Pattern, u64>,
    anchors: u64,
}

impl WindowTable {
    pub fn add_post(&mut self, tokens: &[String], gaz: &Gazetteer, shapes: &[WindowShape]) {
        for (i, tok) in tokens.iter().enumerate() {
            if !gaz.contains(tok) {
                continue;
            }
            self.anchors += 1;
            for span in windows(tokens, i, shapes) {
                *self.counts.entry(Pattern::at(tokens, i, span)).or_insert(0) += 1;
            }
        }
    }

    pub fn merge(&mut self, other: WindowTable) {
        self.anchors += other.anchors;
        for (p, c) in other.counts {
            *self.counts.entry(p).or_insert(0) += c;
        }
    }

    pub fn anchors(&self) -> u64 {
        self.anchors
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn frequency(&self, pattern: &Pattern) -> u64 {
        self.counts.get(pattern).copied().unwrap_or(0)
    }

    /// The `cap` most frequent patterns; ties by rendered pattern.
    pub fn top(&self, cap: usize) -> Vec<(Pattern, u64)> {
        let mut all: Vec<(String, &Pattern, u64)> = self.counts.iter().map(|(p, &c)| (p.to_string(), p, c)).collect();
        all.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        all.into_iter().take(cap).map(|(_, p, c)| (p.clone(), c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    /// Most frequent patterns considered for scoring.
    pub candidate_cap: usize,
    /// Highest-yield patterns retained.
    pub retained_cap: usize,
    /// A slot filler counts toward yield when its max log placeness exceeds this.
    pub yield_log_t: f64,
    pub shapes: Vec<WindowShape>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { candidate_cap: 900, retained_cap: 150, yield_log_t: 20.0, shapes: WindowShape::ALL.to_vec() }
    }
}

fn high_placeness(store: &ModelStore, word: &str, log_t: f64) -> bool {
    store.get(word).is_some_and(|m| m.max_log_placeness() > log_t)
}

/// Mines, scores and ranks constructions.
///
/// `posts` are tokenized posts; the same corpus is scanned twice, once to
/// tabulate anchor windows and once to collect every construction's slot fillers.
pub fn mine_constructions<T: AsRef<[String]>>(
    posts: &[T],
    gaz: &Gazetteer,
    store: &ModelStore,
    config: &MiningConfig,
) -> Result<Vec<Construction>, MiningError> {
    let mut table = WindowTable::default();
    for post in posts {
        table.add_post(post.as_ref(), gaz, &config.shapes);
    }
    if table.anchors() == 0 {
        return Err(MiningError::NoAnchors);
    }
    let candidates = table.top(config.candidate_cap);
    let fillers = slot_fillers(posts, &candidates);

    let mut scored: Vec<(String, Construction)> = candidates
        .into_iter()
        .zip(fillers)
        .map(|((pattern, frequency), words)| {
            let good = words.iter().filter(|w| high_placeness(store, w, config.yield_log_t)).count();
            let yield_score = if words.is_empty() { 0.0 } else { good as f64 / words.len() as f64 };
            (pattern.to_string(), Construction { pattern, frequency, yield_score })
        })
        .collect();
    scored.sort_by(|(ka, a), (kb, b)| {
        b.yield_score.total_cmp(&a.yield_score).then(b.frequency.cmp(&a.frequency)).then_with(|| ka.cmp(kb))
    });
    scored.truncate(config.retained_cap);
    Ok(scored.into_iter().map(|(_, c)| c).collect())
}

/// Distinct slot fillers of each candidate across the corpus.
fn slot_fillers<T: AsRef<[String]>>(posts: &[T], candidates: &[(Pattern, u64)]) -> Vec<HashSet<String>> {
    let set = ConstructionSet::new(
        candidates.iter().map(|(p, f)| Construction { pattern: p.clone(), frequency: *f, yield_score: 0.0 }).collect(),
    );
    let mut fillers = vec![HashSet::new(); candidates.len()];
    for post in posts {
        let tokens = post.as_ref();
        for i in 0..tokens.len() {
            for c in set.matches_at(tokens, i) {
                if !fillers[c].contains(&tokens[i]) {
                    fillers[c].insert(tokens[i].clone());
                }
            }
        }
    }
    fillers
}

fn window_hash(before: &[String], after: &[String]) -> u64 {
    let mut h = DefaultHasher::new();
    before.hash(&mut h);
    after.hash(&mut h);
    h.finish()
}

/// Retained constructions indexed for matching without allocating.
#[derive(Debug, Clone, Default)]
pub struct ConstructionSet {
    constructions: Vec<Construction>,
    index: HashMap<u64, Vec<usize>>,
    spans: Vec<(usize, usize)>,
    // Cheap rejection: the tokens adjacent to the slot in some pattern.
    left_neighbours: HashSet<String>,
    right_neighbours: HashSet<String>,
}

impl ConstructionSet {
    pub fn new(constructions: Vec<Construction>) -> Self {
        let mut index: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut spans = BTreeSet::new();
        let (mut left_neighbours, mut right_neighbours) = (HashSet::new(), HashSet::new());
        for (i, c) in constructions.iter().enumerate() {
            let p = &c.pattern;
            index.entry(window_hash(&p.before, &p.after)).or_default().push(i);
            spans.insert((p.before.len(), p.after.len()));
            left_neighbours.extend(p.before.last().cloned());
            right_neighbours.extend(p.after.first().cloned());
        }
        Self { constructions, index, spans: spans.into_iter().collect(), left_neighbours, right_neighbours }
    }

    pub fn constructions(&self) -> &[Construction] {
        &self.constructions
    }

    pub fn len(&self) -> usize {
        self.constructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constructions.is_empty()
    }

    /// Indices of constructions whose slot sits at `tokens[i]`, ascending.
    pub fn matches_at(&self, tokens: &[String], i: usize) -> Vec<usize> {
        let (left, right) = (i, tokens.len() - 1 - i);
        if (left == 0 || !self.left_neighbours.contains(&tokens[i - 1]))
            && (right == 0 || !self.right_neighbours.contains(&tokens[i + 1]))
        {
            return Vec::new();
        }
        let mut hits = Vec::new();
        for &(b, a) in &self.spans {
            if b > left || a > right {
                continue;
            }
            if (b > 0 && !self.left_neighbours.contains(&tokens[i - 1]))
                || (a > 0 && !self.right_neighbours.contains(&tokens[i + 1]))
            {
                continue;
            }
            let (before, after) = (&tokens[i - b..i], &tokens[i + 1..i + 1 + a]);
            if let Some(ids) = self.index.get(&window_hash(before, after)) {
                hits.extend(ids.iter().copied().filter(|&c| self.constructions[c].pattern.matches_at(tokens, i)));
            }
        }
        hits.sort_unstable();
        hits
    }
}

/// Slot fillers in `doc`: each construction match adds one to its filler's count.
pub fn extract_candidates(doc: &Document, set: &ConstructionSet) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for i in 0..doc.tokens.len() {
        let n = set.matches_at(&doc.tokens, i).len();
        if n > 0 {
            *out.entry(doc.tokens[i].clone()).or_insert(0) += n;
        }
    }
    out
}

/// `lower_fraction · N ≤ f ≤ N / upper_divisor`, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyBand {
    pub lower_fraction: f64,
    pub upper_divisor: f64,
}

impl Default for FrequencyBand {
    fn default() -> Self {
        Self { lower_fraction: 0.00008, upper_divisor: 300.0 }
    }
}

impl FrequencyBand {
    // Compare f/N against the fraction (both correctly rounded from the same real
    // when they coincide) and f·d against N (exact for integral d), so boundary
    // cases land on the inclusive side.
    pub fn admits(&self, f: usize, n: usize) -> bool {
        if n == 0 {
            return false;
        }
        let (f, n) = (f as f64, n as f64);
        f / n >= self.lower_fraction && f * self.upper_divisor <= n
    }
}

/// Words whose count lies inside the band for a text of `n` tokens.
pub fn frequency_filter(counts: &BTreeMap<String, usize>, n: usize, band: &FrequencyBand) -> BTreeSet<String> {
    counts.iter().filter(|(_, &f)| band.admits(f, n)).map(|(w, _)| w.clone()).collect()
}

/// Filters a document down to its locationally indicative words.
///
/// Slot fillers are band-filtered on their raw count in the document, looked up
/// in the store and kept when their max log placeness exceeds `log_t`. Survivors
/// come back in order of first occurrence.
pub fn filter_document<'s>(
    doc: &Document,
    set: &ConstructionSet,
    store: &'s ModelStore,
    band: &FrequencyBand,
    log_t: f64,
) -> Vec<&'s WordModel> {
    let candidates = extract_candidates(doc, set);
    if candidates.is_empty() {
        return Vec::new();
    }
    let raw = token_counts(&doc.tokens, |t| candidates.contains_key(t));
    let admitted = frequency_filter(&raw, doc.tokens.len(), band);
    first_occurrences(&doc.tokens)
        .filter(|t| admitted.contains(*t))
        .filter_map(|t| store.get(t))
        .filter(|m| m.max_log_placeness() > log_t)
        .collect()
}

fn token_counts(tokens: &[String], keep: impl Fn(&str) -> bool) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in tokens.iter().filter(|t| keep(t)) {
        *counts.entry(t.clone()).or_insert(0) += 1;
    }
    counts
}

/// Distinct tokens in order of first occurrence.
pub fn first_occurrences(tokens: &[String]) -> impl Iterator<Item = &String> {
    let mut seen = HashSet::new();
    tokens.iter().filter(move |t| seen.insert(t.as_str()))
}

/// Fraction of a document's tokens that survive filtering.
pub fn retained_token_fraction(doc: &Document, survivors: &[&WordModel]) -> f64 {
    if doc.tokens.is_empty() {
        return 0.0;
    }
    let keep: HashSet<&str> = survivors.iter().map(|m| m.word.as_str()).collect();
    doc.tokens.iter().filter(|t| keep.contains(t.as_str())).count() as f64 / doc.tokens.len() as f64
}

/// Slot fillers seen across a collection that have a word model, with their max log placeness.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterLexicon {
    words: BTreeMap<String, f64>,
}

impl FilterLexicon {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, set: &ConstructionSet, store: &ModelStore) -> Self {
        let mut words = BTreeMap::new();
        for doc in docs {
            for word in extract_candidates(doc, set).into_keys() {
                if let Some(m) = store.get(&word) {
                    words.insert(word, m.max_log_placeness());
                }
            }
        }
        Self { words }
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.words.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.words.iter().map(|(w, &p)| (w.as_str(), p))
    }
}

/// One line per construction: `shape <TAB> pattern <TAB> frequency <TAB> yield_score`.
pub fn write_constructions<W: Write>(mut out: W, constructions: &[Construction]) -> io::Result<()> {
    for c in constructions {
        writeln!(out, "{}\t{}\t{}\t{}", c.shape(), c.pattern, c.frequency, c.yield_score)?;
    }
    out.flush()
}

pub fn save_constructions(path: impl AsRef<Path>, constructions: &[Construction]) -> Result<(), MiningError> {
    let path = path.as_ref();
    let io_err = |source| MiningError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    write_constructions(BufWriter::new(file), constructions).map_err(io_err)
}

pub fn read_constructions<R: BufRead>(reader: R) -> Result<Vec<Construction>, MiningError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| MiningError::Parse { line: line_no, reason: e.to_string() })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |reason: String| MiningError::Parse { line: line_no, reason };
        let f: Vec<&str> = line.split('\t').collect();
        let [shape, pattern, freq, yld] = f.as_slice() else {
            return Err(parse(format!("expected 4 fields, found {}", f.len())));
        };
        let shape: WindowShape = shape.parse().map_err(parse)?;
        let pattern: Pattern = pattern.parse().map_err(parse)?;
        if pattern.shape() != shape {
            return Err(parse(format!("pattern {pattern} does not have shape {shape}")));
        }
        let frequency = freq.parse::<u64>().map_err(|e| parse(e.to_string()))?;
        let yield_score = yld.parse::<f64>().map_err(|e| parse(e.to_string()))?;
        if !(0.0..=1.0).contains(&yield_score) {
            return Err(parse(format!("yield score {yield_score} outside [0, 1]")));
        }
        out.push(Construction { pattern, frequency, yield_score });
    }
    Ok(out)
}

pub fn load_constructions(path: impl AsRef<Path>) -> Result<Vec<Construction>, MiningError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| MiningError::Io { path: path.to_path_buf(), source })?;
    read_constructions(BufReader::new(file))
}
