//! Error distributions of predictors against gold locations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::Document;
use crate::geo::{haversine, CellIndex, GeoPoint, Grid};
use crate::predict::{Prediction, Predictor};

pub const DEFAULT_RADIUS_KM: f64 = 100.0;
/// Histogram bucket width; the last bucket collects everything beyond.
pub const HISTOGRAM_BUCKET_KM: f64 = 100.0;
pub const HISTOGRAM_BUCKETS: usize = 14;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("document {0:?} has no gold location")]
    MissingGold(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_total: usize,
    pub n_predicted: usize,
    /// Predictions strictly closer than the radius.
    pub n_correct: usize,
    pub radius_km: f64,
    /// Error statistics over predicted documents; `None` when nothing was predicted.
    pub median_km: Option<f64>,
    pub mean_km: Option<f64>,
    pub p25_km: Option<f64>,
    pub p75_km: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub histogram: [usize; HISTOGRAM_BUCKETS],
}

impl EvalReport {
    pub fn p50_km(&self) -> Option<f64> {
        self.median_km
    }
}

/// Linear interpolation between closest ranks (`numpy.percentile`'s default).
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let h = (n - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Scores `(predicted, gold)` pairs; `None` predictions are abstentions.
pub fn evaluate(pairs: &[(Option<GeoPoint>, GeoPoint)], radius_km: f64) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut errors: Vec<f64> = pairs.iter().filter_map(|(p, g)| p.map(|p| haversine(p, *g))).collect();
    // sorted before summing so the report does not depend on input order
    errors.sort_by(f64::total_cmp);
    let n_total = pairs.len();
    let n_predicted = errors.len();
    let n_correct = errors.iter().filter(|&&e| e < radius_km).count();
    let mut histogram = [0; HISTOGRAM_BUCKETS];
    for &e in &errors {
        histogram[((e / HISTOGRAM_BUCKET_KM) as usize).min(HISTOGRAM_BUCKETS - 1)] += 1;
    }
    Ok(EvalReport {
        n_total,
        n_predicted,
        n_correct,
        radius_km,
        median_km: percentile(&errors, 50.0),
        mean_km: (n_predicted > 0).then(|| errors.iter().sum::<f64>() / n_predicted as f64),
        p25_km: percentile(&errors, 25.0),
        p75_km: percentile(&errors, 75.0),
        precision: if n_predicted == 0 { 0.0 } else { n_correct as f64 / n_predicted as f64 },
        recall: n_correct as f64 / n_total as f64,
        histogram,
    })
}

/// Pairs predictions with the documents' gold locations.
pub fn gold_pairs(
    docs: &[Document],
    predictions: &[Prediction],
) -> Result<Vec<(Option<GeoPoint>, GeoPoint)>, EvalError> {
    docs.iter()
        .zip(predictions)
        .map(|(d, p)| d.gold_location.map(|g| (p.location(), g)).ok_or_else(|| EvalError::MissingGold(d.id.clone())))
        .collect()
}

pub fn evaluate_predictor(
    docs: &[Document],
    predictor: &Predictor<'_>,
    radius_km: f64,
) -> Result<EvalReport, EvalError> {
    evaluate(&gold_pairs(docs, &predictor.predict_all(docs))?, radius_km)
}

/// One report per threshold, in the order given.
pub fn threshold_sweep(
    docs: &[Document],
    predictor: &Predictor<'_>,
    log_ts: &[f64],
    radius_km: f64,
) -> Result<Vec<(f64, EvalReport)>, EvalError> {
    log_ts.iter().map(|&t| Ok((t, evaluate_predictor(docs, &predictor.with_log_t(t), radius_km)?))).collect()
}

/// A report row as exported to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    #[serde(rename = "log_T")]
    pub log_t: Option<f64>,
    pub median_km: Option<f64>,
    pub mean_km: Option<f64>,
    pub p25: Option<f64>,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub n_total: usize,
    pub n_predicted: usize,
}

impl ReportRow {
    pub fn new(model: impl Into<String>, log_t: Option<f64>, r: &EvalReport) -> Self {
        Self {
            model: model.into(),
            log_t,
            median_km: r.median_km,
            mean_km: r.mean_km,
            p25: r.p25_km,
            p50: r.p50_km(),
            p75: r.p75_km,
            precision: r.precision,
            recall: r.recall,
            n_total: r.n_total,
            n_predicted: r.n_predicted,
        }
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ReportRow>, EvalError> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(EvalError::from)).collect()
}

fn km(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

/// Fixed-width text table for terminals.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>9}",
        "model", "log_T", "median", "mean", "p25", "p50", "p75", "precision", "recall", "total", "predicted"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9.2} {:>7.2} {:>7} {:>9}",
            r.model,
            r.log_t.map_or_else(|| "-".to_string(), |t| t.to_string()),
            km(r.median_km),
            km(r.mean_km),
            km(r.p25),
            km(r.p50),
            km(r.p75),
            r.precision,
            r.recall,
            r.n_total,
            r.n_predicted
        );
    }
    s
}

/// Per-cell occurrence counts of selected terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMap {
    pub terms: Vec<String>,
    /// Only cells with at least one occurrence; counts follow `terms`.
    pub counts: BTreeMap<CellIndex, Vec<usize>>,
}

impl TermMap {
    pub fn count(&self, cell: CellIndex, term: &str) -> usize {
        let Some(j) = self.terms.iter().position(|t| t == term) else { return 0 };
        self.counts.get(&cell).map_or(0, |c| c[j])
    }

    /// A FeatureCollection with one polygon per grid cell, including empty ones.
    pub fn to_geojson(&self, grid: &Grid) -> Value {
        let zeros = vec![0; self.terms.len()];
        let features: Vec<Value> = grid
            .cells()
            .map(|cell| {
                let (sw, ne) = grid.cell_bounds(cell).expect("grid cell");
                let (w, s, e, n) = (sw.lon(), sw.lat(), ne.lon(), ne.lat());
                let mut props = serde_json::Map::new();
                props.insert("row".into(), json!(cell.row));
                props.insert("col".into(), json!(cell.col));
                for (t, c) in self.terms.iter().zip(self.counts.get(&cell).unwrap_or(&zeros)) {
                    props.insert(t.clone(), json!(c));
                }
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [[[w, s], [e, s], [e, n], [w, n], [w, s]]]},
                    "properties": props,
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }
}

pub fn write_geojson<W: Write>(mut out: W, map: &TermMap, grid: &Grid) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(&mut out, &map.to_geojson(grid)).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Counts each term's occurrences in located documents, per containing cell.
/// Documents outside the grid are skipped.
pub fn term_map<'a>(
    docs: impl IntoIterator<Item = (GeoPoint, &'a [String])>,
    terms: &[String],
    grid: &Grid,
) -> TermMap {
    let mut counts: BTreeMap<CellIndex, Vec<usize>> = BTreeMap::new();
    for (loc, tokens) in docs {
        let Ok(cell) = grid.cell_of(loc) else { continue };
        for tok in tokens {
            if let Some(j) = terms.iter().position(|t| t == tok) {
                counts.entry(cell).or_insert_with(|| vec![0; terms.len()])[j] += 1;
            }
        }
    }
    TermMap { terms: terms.to_vec(), counts }
}
