use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{fit_word, Cov2, FitConfig, GaussianComponent, ModelError, WordModel, SLOTS};
use crate::corpus::TokenOccurrence;
use crate::geo::{project, GeoPoint, PlanarPoint};

const MAGIC: &str = "placeness-store";
const VERSION: u32 = 1;

/// Provenance recorded alongside the models.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreMetadata {
    pub seed: u64,
    /// SHA-256 over the (order-independent) training occurrences.
    pub corpus_hash: String,
    /// Caller-supplied; absent by default so reruns stay byte-identical.
    pub fit_date: Option<String>,
    /// South-west and north-east corners of all training positions.
    pub bbox: Option<(GeoPoint, GeoPoint)>,
    pub placeness_constant: f64,
    pub covariance_floor: f64,
}

/// Word models sharing a single projection origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStore {
    origin: GeoPoint,
    metadata: StoreMetadata,
    models: BTreeMap<String, WordModel>,
}

impl ModelStore {
    pub fn new(origin: GeoPoint, metadata: StoreMetadata, models: impl IntoIterator<Item = WordModel>) -> Self {
        let models = models.into_iter().map(|m| (m.word.clone(), m)).collect();
        Self { origin, metadata, models }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn get(&self, word: &str) -> Option<&WordModel> {
        self.models.get(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.models.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Models in lexicographic word order.
    pub fn iter(&self) -> impl Iterator<Item = &WordModel> {
        self.models.values()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreConfig {
    pub fit: FitConfig,
    /// Keep only this many of the most frequent eligible words.
    pub max_vocab: usize,
    /// Projection origin; defaults to the centre of the training bounding box.
    pub origin: Option<GeoPoint>,
    pub fit_date: Option<String>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { fit: FitConfig::default(), max_vocab: 500_000, origin: None, fit_date: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub occurrences: usize,
    pub distinct_words: usize,
    pub below_support: usize,
    pub over_vocab_cap: usize,
    /// Occurrences dropped because they lie too far from the projection origin.
    pub out_of_range: usize,
}

/// Per-word RNG seed: FNV-1a over the word, mixed with the global seed.
pub fn word_seed(seed: u64, word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finaliser
    let mut z = h ^ seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn corpus_hash(by_word: &[(&String, &Vec<GeoPoint>)]) -> String {
    let mut hasher = Sha256::new();
    for (word, positions) in by_word {
        hasher.update(word.as_bytes());
        hasher.update([0u8]);
        for p in positions.iter() {
            hasher.update(p.lat().to_bits().to_le_bytes());
            hasher.update(p.lon().to_bits().to_le_bytes());
        }
        hasher.update([0xffu8]);
    }
    hasher.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Fits one model per word with enough support, in parallel.
///
/// The result depends only on the multiset of occurrences, not on their order.
pub fn build_store<I>(occurrences: I, config: &StoreConfig) -> Result<(ModelStore, BuildReport), ModelError>
where
    I: IntoIterator<Item = TokenOccurrence>,
{
    let mut report = BuildReport::default();
    let mut grouped: HashMap<String, Vec<GeoPoint>> = HashMap::new();
    let (mut south, mut west, mut north, mut east) = (90.0f64, 180.0f64, -90.0f64, -180.0f64);
    for occ in occurrences {
        report.occurrences += 1;
        let p = occ.location;
        south = south.min(p.lat());
        north = north.max(p.lat());
        west = west.min(p.lon());
        east = east.max(p.lon());
        grouped.entry(occ.token).or_default().push(p);
    }
    if report.occurrences == 0 {
        return Err(ModelError::EmptyStream);
    }
    report.distinct_words = grouped.len();
    let sw = GeoPoint::new(south, west)?;
    let ne = GeoPoint::new(north, east)?;
    let origin = match config.origin {
        Some(o) => o,
        None => GeoPoint::new((south + north) / 2.0, (west + east) / 2.0)?,
    };

    let mut by_word: Vec<(&String, &mut Vec<GeoPoint>)> = grouped.iter_mut().collect();
    by_word.sort_by(|a, b| a.0.cmp(b.0));
    for (_, positions) in by_word.iter_mut() {
        positions.sort_by(|a, b| a.lat().total_cmp(&b.lat()).then(a.lon().total_cmp(&b.lon())));
    }
    let frozen: Vec<(&String, &Vec<GeoPoint>)> = by_word.iter().map(|(w, p)| (*w, &**p)).collect();
    let hash = corpus_hash(&frozen);

    let mut eligible: Vec<(&String, Vec<PlanarPoint>)> = Vec::new();
    for (word, positions) in frozen {
        let mut planar = Vec::with_capacity(positions.len());
        for &p in positions {
            match project(p, origin) {
                Ok(q) => planar.push(q),
                Err(_) => report.out_of_range += 1,
            }
        }
        if planar.len() >= config.fit.min_support.max(1) {
            eligible.push((word, planar));
        } else {
            report.below_support += 1;
        }
    }
    eligible.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));
    if eligible.len() > config.max_vocab {
        report.over_vocab_cap = eligible.len() - config.max_vocab;
        eligible.truncate(config.max_vocab);
    }

    let models =
        eligible.par_iter().map(|(word, planar)| fit_word(word, planar, &config.fit)).collect::<Result<Vec<_>, _>>()?;

    let metadata = StoreMetadata {
        seed: config.fit.seed,
        corpus_hash: hash,
        fit_date: config.fit_date.clone(),
        bbox: Some((sw, ne)),
        placeness_constant: config.fit.placeness_constant,
        covariance_floor: config.fit.covariance_floor,
    };
    Ok((ModelStore::new(origin, metadata, models), report))
}

fn hx(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

/// Serialises the store as versioned text; every float is written as its bit pattern.
pub fn save_store(store: &ModelStore, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, render_store(store)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn render_store(store: &ModelStore) -> String {
    let m = &store.metadata;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}\t{VERSION}");
    let _ = writeln!(out, "origin\t{}\t{}", hx(store.origin.lat()), hx(store.origin.lon()));
    let _ = writeln!(out, "seed\t{}", m.seed);
    let _ = writeln!(out, "corpus_hash\t{}", m.corpus_hash);
    let date = m.fit_date.as_deref().map(|d| d.replace(['\t', '\n', '\r'], " "));
    let _ = writeln!(out, "fit_date\t{}", date.as_deref().unwrap_or("-"));
    match m.bbox {
        Some((sw, ne)) => {
            let _ = writeln!(out, "bbox\t{}\t{}\t{}\t{}", hx(sw.lat()), hx(sw.lon()), hx(ne.lat()), hx(ne.lon()));
        }
        None => out.push_str("bbox\t-\n"),
    }
    let _ = writeln!(out, "placeness_constant\t{}", hx(m.placeness_constant));
    let _ = writeln!(out, "covariance_floor\t{}", hx(m.covariance_floor));
    let _ = writeln!(out, "models\t{}", store.models.len());
    for model in store.models.values() {
        let _ = write!(out, "m\t{}\t{}\t{}", model.word, model.support, u8::from(model.saturated));
        for lp in model.log_placeness {
            let _ = write!(out, "\t{}", hx(lp));
        }
        for c in &model.components {
            for v in [c.weight, c.mean.x, c.mean.y, c.covariance.xx, c.covariance.xy, c.covariance.yy] {
                let _ = write!(out, "\t{}", hx(v));
            }
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn load_store(path: impl AsRef<Path>) -> Result<ModelStore, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    parse_store(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> ModelError {
        ModelError::Corrupt { line: self.line, reason: reason.into() }
    }

    fn next_fields(&mut self, key: &str) -> Result<Vec<&'a str>, ModelError> {
        let (i, line) = self.inner.next().ok_or_else(|| ModelError::Corrupt {
            line: self.line + 1,
            reason: format!("unexpected end of file, expected {key}"),
        })?;
        self.line = i + 1;
        let mut fields: Vec<&str> = line.split('\t').collect();
        if fields[0] != key {
            return Err(self.corrupt(format!("expected {key}, found {:?}", fields[0])));
        }
        fields.remove(0);
        Ok(fields)
    }

    fn float(&self, s: &str) -> Result<f64, ModelError> {
        if s.len() != 16 {
            return Err(self.corrupt(format!("bad float field {s:?}")));
        }
        u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| self.corrupt(format!("bad float field {s:?}")))
    }

    fn point(&self, lat: &str, lon: &str) -> Result<GeoPoint, ModelError> {
        GeoPoint::new(self.float(lat)?, self.float(lon)?).map_err(|e| self.corrupt(e.to_string()))
    }

    fn single(&mut self, key: &str) -> Result<&'a str, ModelError> {
        match self.next_fields(key)?.as_slice() {
            [v] => Ok(v),
            _ => Err(self.corrupt(format!("{key} takes one value"))),
        }
    }
}

pub fn parse_store(text: &str) -> Result<ModelStore, ModelError> {
    let first = text.lines().next().unwrap_or("");
    match first.split_once('\t') {
        Some((MAGIC, v)) if v == VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(ModelError::VersionMismatch { found: v.to_string(), expected: VERSION }),
        _ => return Err(ModelError::Corrupt { line: 1, reason: "missing model store header".into() }),
    }
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    lines.inner.next();
    lines.line = 1;

    let origin = match lines.next_fields("origin")?.as_slice() {
        [lat, lon] => lines.point(lat, lon)?,
        _ => return Err(lines.corrupt("origin takes two values")),
    };
    let seed = lines.single("seed")?.parse::<u64>().map_err(|_| lines.corrupt("bad seed"))?;
    let corpus_hash = lines.single("corpus_hash")?.to_string();
    let fit_date = match lines.single("fit_date")? {
        "-" => None,
        d => Some(d.to_string()),
    };
    let bbox = match lines.next_fields("bbox")?.as_slice() {
        ["-"] => None,
        [a, b, c, d] => Some((lines.point(a, b)?, lines.point(c, d)?)),
        _ => return Err(lines.corrupt("bbox takes four values")),
    };
    let raw = lines.single("placeness_constant")?;
    let placeness_constant = lines.float(raw)?;
    let raw = lines.single("covariance_floor")?;
    let covariance_floor = lines.float(raw)?;
    let count = lines.single("models")?.parse::<usize>().map_err(|_| lines.corrupt("bad model count"))?;

    let mut models = Vec::with_capacity(count);
    for _ in 0..count {
        let f = lines.next_fields("m")?;
        if f.len() != 3 + SLOTS + SLOTS * 6 {
            return Err(lines.corrupt(format!("model record has {} fields", f.len())));
        }
        let word = f[0].to_string();
        let support = f[1].parse::<usize>().map_err(|_| lines.corrupt("bad support"))?;
        let saturated = match f[2] {
            "0" => false,
            "1" => true,
            _ => return Err(lines.corrupt("bad saturation flag")),
        };
        let mut log_placeness = [0.0; SLOTS];
        for (slot, s) in log_placeness.iter_mut().zip(&f[3..3 + SLOTS]) {
            *slot = lines.float(s)?;
        }
        let mut components =
            [GaussianComponent { mean: PlanarPoint::default(), covariance: Cov2::isotropic(0.0), weight: 0.0 }; SLOTS];
        for (j, c) in components.iter_mut().enumerate() {
            let base = 3 + SLOTS + j * 6;
            let v: Vec<f64> = f[base..base + 6].iter().map(|s| lines.float(s)).collect::<Result<_, _>>()?;
            *c = GaussianComponent {
                weight: v[0],
                mean: PlanarPoint::new(v[1], v[2]),
                covariance: Cov2::new(v[3], v[4], v[5]),
            };
        }
        models.push(WordModel { word, components, log_placeness, saturated, support });
    }
    lines.next_fields("end")?;
    if let Some((i, _)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(ModelError::Corrupt { line: i + 1, reason: "trailing data after end marker".into() });
    }
    let metadata = StoreMetadata { seed, corpus_hash, fit_date, bbox, placeness_constant, covariance_floor };
    Ok(ModelStore::new(origin, metadata, models))
}
