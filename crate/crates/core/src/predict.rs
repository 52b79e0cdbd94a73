//! Document location predictors and batch enrichment.
//!
//! Centroid and vote weights are placeness values, which reach `e^87` and
//! beyond; both are computed relative to the largest log placeness involved so
//! nothing overflows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::constructions::{filter_document, first_occurrences, ConstructionSet, FrequencyBand};
use crate::corpus::Document;
use crate::gazetteer::{gazetteer_hits, Gazetteer};
use crate::geo::{unproject, CellIndex, GeoPoint, Grid, PlanarPoint};
use crate::wordmodel::{ModelStore, WordModel};

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("no signal: no word carries placeness")]
    NoSignal,
    #[error("unknown predictor {0:?}; expected gazetteer, total, filtered-centroid or filtered-vote")]
    UnknownPredictor(String),
    #[error("debug dump line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictorKind {
    Gazetteer,
    Total,
    FilteredCentroid,
    FilteredVote,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] =
        [PredictorKind::Gazetteer, PredictorKind::Total, PredictorKind::FilteredCentroid, PredictorKind::FilteredVote];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Gazetteer => "gazetteer",
            PredictorKind::Total => "total",
            PredictorKind::FilteredCentroid => "filtered-centroid",
            PredictorKind::FilteredVote => "filtered-vote",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PredictorKind {
    type Err = PredictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| PredictError::UnknownPredictor(s.to_string()))
    }
}

/// A word that shaped a prediction and how much it weighed: log placeness mass
/// for model-based predictors, occurrence count for the gazetteer.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributor {
    pub word: String,
    pub weight: f64,
}

/// A located or abstaining prediction. Contributors are present exactly when a location is.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    location: Option<GeoPoint>,
    model: PredictorKind,
    contributors: Vec<Contributor>,
}

impl Prediction {
    pub fn abstain(model: PredictorKind) -> Self {
        Self { location: None, model, contributors: Vec::new() }
    }

    pub fn located(model: PredictorKind, location: GeoPoint, contributors: Vec<Contributor>) -> Self {
        assert!(!contributors.is_empty(), "a located prediction needs contributors");
        Self { location: Some(location), model, contributors }
    }

    pub fn location(&self) -> Option<GeoPoint> {
        self.location
    }

    pub fn model(&self) -> PredictorKind {
        self.model
    }

    pub fn contributors(&self) -> &[Contributor] {
        &self.contributors
    }

    pub fn abstained(&self) -> bool {
        self.location.is_none()
    }
}

/// Most frequent gazetteer name in the document; ties go to the earliest first occurrence.
pub fn predict_gazetteer(doc: &Document, gaz: &Gazetteer) -> Prediction {
    let hits = gazetteer_hits(doc, gaz);
    let mut best: Option<(&String, usize)> = None;
    for (name, hit) in &hits {
        if best.is_none_or(|(_, c)| hit.count > c) {
            best = Some((name, hit.count));
        }
    }
    match best {
        None => Prediction::abstain(PredictorKind::Gazetteer),
        Some((name, _)) => {
            let contributors =
                hits.iter().map(|(w, h)| Contributor { word: w.clone(), weight: h.count as f64 }).collect();
            Prediction::located(PredictorKind::Gazetteer, hits[name].location, contributors)
        }
    }
}

/// Every component of every word, as `(planar mean, log placeness)`.
fn components<'a>(words: &'a [&'a WordModel]) -> impl Iterator<Item = (PlanarPoint, f64)> + 'a {
    words.iter().flat_map(|w| w.components.iter().zip(&w.log_placeness).map(|(c, &l)| (c.mean, l)))
}

/// Placeness-weighted mean of all component means, in the projected plane.
pub fn planar_centroid(words: &[&WordModel]) -> Result<PlanarPoint, PredictError> {
    let top = components(words).map(|(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(PredictError::NoSignal);
    }
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for (m, l) in components(words) {
        let w = (l - top).exp();
        sx += w * m.x;
        sy += w * m.y;
        sw += w;
    }
    Ok(PlanarPoint::new(sx / sw, sy / sw))
}

/// [`planar_centroid`] mapped back to latitude and longitude.
pub fn centroid(words: &[&WordModel], origin: GeoPoint) -> Result<GeoPoint, PredictError> {
    planar_centroid(words).map(|p| unproject(p, origin))
}

/// Per-cell vote totals, scaled so the strongest in-grid component votes 1.
pub fn vote_scores(words: &[&WordModel], grid: &Grid, origin: GeoPoint) -> BTreeMap<CellIndex, f64> {
    let votes: Vec<(CellIndex, f64)> =
        components(words).filter_map(|(m, l)| grid.cell_of(unproject(m, origin)).ok().map(|cell| (cell, l))).collect();
    let top = votes.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    let mut scores = BTreeMap::new();
    if !top.is_finite() {
        return scores;
    }
    for (cell, l) in votes {
        *scores.entry(cell).or_insert(0.0) += (l - top).exp();
    }
    scores
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub cell: CellIndex,
    pub center: GeoPoint,
}

/// Each component votes its placeness into its cell; the centre of the best cell
/// wins, ties going to the lowest `(row, col)`. Out-of-grid means do not vote.
pub fn grid_vote(words: &[&WordModel], grid: &Grid, origin: GeoPoint) -> Result<Vote, PredictError> {
    let mut best: Option<(CellIndex, f64)> = None;
    for (cell, score) in vote_scores(words, grid, origin) {
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((cell, score));
        }
    }
    let (cell, _) = best.ok_or(PredictError::NoSignal)?;
    let center = grid.cell_center(cell).expect("winning cell lies in the grid");
    Ok(Vote { cell, center })
}

fn contributors(words: &[&WordModel]) -> Vec<Contributor> {
    words.iter().map(|w| Contributor { word: w.word.clone(), weight: w.log_placeness_mass() }).collect()
}

fn from_centroid(kind: PredictorKind, words: &[&WordModel], origin: GeoPoint) -> Prediction {
    match centroid(words, origin) {
        Ok(p) => Prediction::located(kind, p, contributors(words)),
        Err(_) => Prediction::abstain(kind),
    }
}

/// Words of the document (first occurrence order) whose model clears `log_t`.
pub fn placeful_words<'s>(doc: &Document, store: &'s ModelStore, log_t: f64) -> Vec<&'s WordModel> {
    first_occurrences(&doc.tokens).filter_map(|t| store.get(t)).filter(|m| m.max_log_placeness() > log_t).collect()
}

/// Centroid over every placeful word, without construction or frequency filtering.
pub fn predict_total(doc: &Document, store: &ModelStore, log_t: f64) -> Prediction {
    from_centroid(PredictorKind::Total, &placeful_words(doc, store, log_t), store.origin())
}

pub fn predict_filtered_centroid(
    doc: &Document,
    set: &ConstructionSet,
    store: &ModelStore,
    band: &FrequencyBand,
    log_t: f64,
) -> Prediction {
    let words = filter_document(doc, set, store, band, log_t);
    from_centroid(PredictorKind::FilteredCentroid, &words, store.origin())
}

pub fn predict_filtered_vote(
    doc: &Document,
    set: &ConstructionSet,
    store: &ModelStore,
    grid: &Grid,
    band: &FrequencyBand,
    log_t: f64,
) -> Prediction {
    let words = filter_document(doc, set, store, band, log_t);
    match grid_vote(&words, grid, store.origin()) {
        Ok(v) => Prediction::located(PredictorKind::FilteredVote, v.center, contributors(&words)),
        Err(_) => Prediction::abstain(PredictorKind::FilteredVote),
    }
}

/// A configured predictor over borrowed, immutable resources.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Gazetteer(&'a Gazetteer),
    Total {
        store: &'a ModelStore,
        log_t: f64,
    },
    FilteredCentroid {
        store: &'a ModelStore,
        constructions: &'a ConstructionSet,
        band: FrequencyBand,
        log_t: f64,
    },
    FilteredVote {
        store: &'a ModelStore,
        constructions: &'a ConstructionSet,
        grid: &'a Grid,
        band: FrequencyBand,
        log_t: f64,
    },
}

impl Predictor<'_> {
    pub fn kind(&self) -> PredictorKind {
        match self {
            Predictor::Gazetteer(_) => PredictorKind::Gazetteer,
            Predictor::Total { .. } => PredictorKind::Total,
            Predictor::FilteredCentroid { .. } => PredictorKind::FilteredCentroid,
            Predictor::FilteredVote { .. } => PredictorKind::FilteredVote,
        }
    }

    /// The placeness threshold, if this predictor uses one.
    pub fn log_t(&self) -> Option<f64> {
        match *self {
            Predictor::Gazetteer(_) => None,
            Predictor::Total { log_t, .. }
            | Predictor::FilteredCentroid { log_t, .. }
            | Predictor::FilteredVote { log_t, .. } => Some(log_t),
        }
    }

    /// Same predictor at another threshold; the gazetteer predictor is unchanged.
    pub fn with_log_t(mut self, t: f64) -> Self {
        match &mut self {
            Predictor::Gazetteer(_) => {}
            Predictor::Total { log_t, .. }
            | Predictor::FilteredCentroid { log_t, .. }
            | Predictor::FilteredVote { log_t, .. } => *log_t = t,
        }
        self
    }

    pub fn predict(&self, doc: &Document) -> Prediction {
        match *self {
            Predictor::Gazetteer(gaz) => predict_gazetteer(doc, gaz),
            Predictor::Total { store, log_t } => predict_total(doc, store, log_t),
            Predictor::FilteredCentroid { store, constructions, band, log_t } => {
                predict_filtered_centroid(doc, constructions, store, &band, log_t)
            }
            Predictor::FilteredVote { store, constructions, grid, band, log_t } => {
                predict_filtered_vote(doc, constructions, store, grid, &band, log_t)
            }
        }
    }

    /// Predicts in parallel; results keep the input order.
    pub fn predict_all(&self, docs: &[Document]) -> Vec<Prediction> {
        docs.par_iter().map(|d| self.predict(d)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnrichSummary {
    pub documents: usize,
    pub located: usize,
}

impl EnrichSummary {
    /// Fraction of documents that received a location.
    pub fn coverage(&self) -> f64 {
        if self.documents == 0 {
            0.0
        } else {
            self.located as f64 / self.documents as f64
        }
    }
}

/// Writes `id <TAB> lat <TAB> lon` for every document the predictor locates.
pub fn enrich<W: Write>(docs: &[Document], predictor: &Predictor<'_>, mut out: W) -> io::Result<EnrichSummary> {
    let predictions = predictor.predict_all(docs);
    let mut summary = EnrichSummary { documents: docs.len(), located: 0 };
    for (doc, p) in docs.iter().zip(&predictions) {
        if let Some(loc) = p.location() {
            writeln!(out, "{}\t{}\t{}", doc.id, loc.lat(), loc.lon())?;
            summary.located += 1;
        }
    }
    out.flush()?;
    Ok(summary)
}

/// One line of the prediction debug dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub model: PredictorKind,
    pub location: Option<GeoPoint>,
    pub contributors: usize,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, p: &Prediction) -> Self {
        Self { id: id.into(), model: p.model(), location: p.location(), contributors: p.contributors().len() }
    }
}

/// `id <TAB> model <TAB> lat <TAB> lon <TAB> abstained <TAB> contributor count`;
/// abstentions leave lat and lon empty.
pub fn write_predictions<W: Write>(mut out: W, records: &[PredictionRecord]) -> io::Result<()> {
    for r in records {
        let (lat, lon) = match r.location {
            Some(p) => (p.lat().to_string(), p.lon().to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{}\t{}\t{lat}\t{lon}\t{}\t{}", r.id, r.model, r.location.is_none(), r.contributors)?;
    }
    out.flush()
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, PredictError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let parse = |reason: String| PredictError::Parse { line: i + 1, reason };
        let line = line.map_err(|e| parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [id, model, lat, lon, abstained, count] = f.as_slice() else {
            return Err(parse(format!("expected 6 fields, found {}", f.len())));
        };
        let model: PredictorKind = model.parse().map_err(|e: PredictError| parse(e.to_string()))?;
        let abstained: bool = abstained.parse().map_err(|_| parse(format!("bad abstained flag {abstained:?}")))?;
        let location = if abstained {
            None
        } else {
            let lat = lat.parse::<f64>().map_err(|e| parse(e.to_string()))?;
            let lon = lon.parse::<f64>().map_err(|e| parse(e.to_string()))?;
            Some(GeoPoint::new(lat, lon).map_err(|e| parse(e.to_string()))?)
        };
        let contributors = count.parse().map_err(|_| parse(format!("bad contributor count {count:?}")))?;
        out.push(PredictionRecord { id: id.to_string(), model, location, contributors });
    }
    Ok(out)
}
