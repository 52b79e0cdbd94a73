//! Per-word geographic Gaussian mixtures and placeness scoring.
//!
//! Every word seen often enough in geotagged posts gets a mixture of three 2-D
//! Gaussians fitted in the shared planar (km) projection. Each component is scored
//! by its *placeness*: with `rho` the log density of the weighted component at its
//! own mean, `log p = C / -rho` where `C` defaults to 100. Tight, dominant clusters
//! push `rho` toward zero from below and so receive very large placeness.
//!
//! Placeness is stored in log form because `p` itself overflows `f64` for tight
//! clusters.

mod em;
mod store;

use thiserror::Error;

pub use em::{fit_mixture, kmeans_plus_plus, MixtureFit};
pub use store::{
    build_store, load_store, parse_store, render_store, save_store, word_seed, BuildReport, ModelStore, StoreConfig,
    StoreMetadata,
};

use crate::geo::{GeoError, PlanarPoint};

/// Number of component slots every [`WordModel`] carries.
pub const SLOTS: usize = 3;

/// `rho` values at or above zero are clamped to `-SATURATION_EPSILON`.
pub const SATURATION_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("word {word:?} has {have} usable positions, {need} required")]
    InsufficientSupport { word: String, have: usize, need: usize },
    #[error("component count must be 1, 2 or 3, got {0}")]
    InvalidComponentCount(usize),
    #[error("no occurrences to fit")]
    EmptyStream,
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("i/o error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("unsupported model store format {found:?} (expected version {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("corrupt model store at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]` in km².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn isotropic(v: f64) -> Self {
        Self { xx: v, xy: 0.0, yy: v }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Eigenvalues, smallest first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(self.xy);
        (half_tr - r, half_tr + r)
    }

    /// Raises every eigenvalue below `floor` to `floor`, keeping eigenvectors.
    ///
    /// This is the constrained maximum-likelihood covariance under a minimum
    /// eigenvalue bound, so EM stays monotone with the floor applied.
    pub fn with_floor(&self, floor: f64) -> Self {
        let (lo, _) = self.eigenvalues();
        if lo >= floor {
            return *self;
        }
        let theta = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        let (s, c) = theta.sin_cos();
        let l1 = self.xx * c * c + 2.0 * self.xy * c * s + self.yy * s * s;
        let l2 = self.xx * s * s - 2.0 * self.xy * c * s + self.yy * c * c;
        let (l1, l2) = (l1.max(floor), l2.max(floor));
        if l1 == floor && l2 == floor {
            return Self::isotropic(floor);
        }
        Self { xx: l1 * c * c + l2 * s * s, xy: (l1 - l2) * c * s, yy: l1 * s * s + l2 * c * c }
    }

    /// Log density of `N(d | 0, self)` for an offset `d` from the mean.
    pub fn log_density(&self, dx: f64, dy: f64) -> f64 {
        let det = self.det();
        let mahalanobis = (self.yy * dx * dx - 2.0 * self.xy * dx * dy + self.xx * dy * dy) / det;
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * mahalanobis
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mean: PlanarPoint,
    pub covariance: Cov2,
    pub weight: f64,
}

/// `rho = log(weight) - log(2π) - ½ log det(Σ)`: the log of the weighted
/// component density evaluated at its own mean.
pub fn log_density_at_mean(c: &GaussianComponent) -> f64 {
    c.weight.ln() + c.covariance.log_density(0.0, 0.0)
}

/// A placeness score kept in log form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placeness {
    pub log_value: f64,
    /// `rho` was non-negative and had to be clamped.
    pub saturated: bool,
}

impl Placeness {
    /// `p` itself; overflows to infinity above `log p ≈ 709`.
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// `log p = constant / -rho`. A zero-weight component (`rho = -∞`) scores `log p = 0`.
pub fn placeness(rho: f64, constant: f64) -> Placeness {
    if rho >= 0.0 {
        return Placeness { log_value: constant / SATURATION_EPSILON, saturated: true };
    }
    Placeness { log_value: constant / -rho, saturated: false }
}

/// Parameters of a single word fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Requested components, 1..=3.
    pub k: usize,
    pub min_support: usize,
    /// Below `k * min_points_per_component` positions the component count shrinks.
    pub min_points_per_component: usize,
    pub seed: u64,
    /// Minimum covariance eigenvalue, km².
    pub covariance_floor: f64,
    pub max_iter: usize,
    /// EM stops once the log-likelihood gain per point drops below this.
    pub tol_per_point: f64,
    pub placeness_constant: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 3,
            min_support: 10,
            min_points_per_component: 5,
            seed: 42,
            covariance_floor: 0.5,
            max_iter: 200,
            tol_per_point: 1e-6,
            placeness_constant: 100.0,
        }
    }
}

/// A word's three-slot mixture, components ordered by descending placeness.
#[derive(Debug, Clone, PartialEq)]
pub struct WordModel {
    pub word: String,
    pub components: [GaussianComponent; SLOTS],
    /// Log placeness per component, sorted descending. Padding slots have zero weight and log placeness 0.
    pub log_placeness: [f64; SLOTS],
    pub saturated: bool,
    /// Number of positions the mixture was fitted on.
    pub support: usize,
}

impl WordModel {
    /// Highest component log placeness.
    pub fn max_log_placeness(&self) -> f64 {
        self.log_placeness.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn placeness(&self) -> [f64; SLOTS] {
        self.log_placeness.map(f64::exp)
    }

    /// `log Σ p_j`, computed without overflow.
    pub fn log_placeness_mass(&self) -> f64 {
        let m = self.max_log_placeness();
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + self.log_placeness.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    }

    /// Builds a model from fitted components: scores, sorts and pads to three slots.
    pub fn from_components(
        word: impl Into<String>,
        mut fitted: Vec<GaussianComponent>,
        support: usize,
        constant: f64,
    ) -> Self {
        assert!(!fitted.is_empty() && fitted.len() <= SLOTS, "1..=3 fitted components required");
        let mut scored: Vec<(GaussianComponent, Placeness)> =
            fitted.drain(..).map(|c| (c, placeness(log_density_at_mean(&c), constant))).collect();
        scored.sort_by(|(a, pa), (b, pb)| {
            pb.log_value
                .total_cmp(&pa.log_value)
                .then(b.weight.total_cmp(&a.weight))
                .then(a.mean.x.total_cmp(&b.mean.x))
                .then(a.mean.y.total_cmp(&b.mean.y))
        });
        let saturated = scored.iter().any(|(_, p)| p.saturated);
        let strongest = scored[0].0;
        let mut components = [GaussianComponent { weight: 0.0, ..strongest }; SLOTS];
        let mut log_placeness = [0.0; SLOTS];
        for (slot, (c, p)) in scored.into_iter().enumerate() {
            components[slot] = c;
            log_placeness[slot] = p.log_value;
        }
        Self { word: word.into(), components, log_placeness, saturated, support }
    }
}

/// Fits a word's mixture; positions are sorted first so the fit ignores input order.
pub fn fit_word(word: &str, positions: &[PlanarPoint], config: &FitConfig) -> Result<WordModel, ModelError> {
    fit_word_traced(word, positions, config).map(|(m, _)| m)
}

/// Like [`fit_word`], also returning the EM log-likelihood trace.
pub fn fit_word_traced(
    word: &str,
    positions: &[PlanarPoint],
    config: &FitConfig,
) -> Result<(WordModel, Vec<f64>), ModelError> {
    if !(1..=SLOTS).contains(&config.k) {
        return Err(ModelError::InvalidComponentCount(config.k));
    }
    let need = config.min_support.max(1);
    if positions.len() < need {
        return Err(ModelError::InsufficientSupport { word: word.to_string(), have: positions.len(), need });
    }
    let mut sorted = positions.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));

    let k = effective_k(config.k, sorted.len(), config.min_points_per_component);
    let fit = fit_mixture(&sorted, k, word_seed(config.seed, word), config);
    let model = WordModel::from_components(word, fit.components, sorted.len(), config.placeness_constant);
    Ok((model, fit.log_likelihood))
}

fn effective_k(k: usize, n: usize, per_component: usize) -> usize {
    k.min(n / per_component.max(1)).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn comp(weight: f64, cov: Cov2) -> GaussianComponent {
        GaussianComponent { mean: PlanarPoint::new(3.0, -4.0), covariance: cov, weight }
    }

    #[test]
    fn log_density_closed_forms() {
        let unit_peak = comp(1.0, Cov2::isotropic(1.0 / (2.0 * PI)));
        assert!(log_density_at_mean(&unit_peak).abs() < 1e-12);
        let unit = comp(1.0, Cov2::isotropic(1.0));
        assert!((log_density_at_mean(&unit) + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((log_density_at_mean(&unit) + 1.8379).abs() < 1e-4);
    }

    // Midpoint-rule integral of the weighted density over ±8σ recovers the
    // weight, which pins the normalisation used in the closed form.
    #[test]
    fn weighted_density_integrates_to_weight() {
        let c = comp(0.5, Cov2::isotropic(4.0));
        let expected = 0.5_f64.ln() - (2.0 * PI).ln() - 0.5 * 16.0_f64.ln();
        assert!((log_density_at_mean(&c) - expected).abs() < 1e-12);

        let (h, half) = (0.02, 16.0);
        let steps = (2.0 * half / h) as usize;
        let mut mass = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let dx = -half + (i as f64 + 0.5) * h;
                let dy = -half + (j as f64 + 0.5) * h;
                mass += (c.weight.ln() + c.covariance.log_density(dx, dy)).exp() * h * h;
            }
        }
        assert!((mass - 0.5).abs() < 1e-6, "{mass}");
        assert!(((c.weight.ln() + c.covariance.log_density(0.0, 0.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn placeness_formula() {
        assert_eq!(placeness(-100.0, 100.0).log_value, 1.0);
        assert!((placeness(-100.0, 100.0).value() - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(placeness(-2.0, 100.0).log_value, 50.0);
        assert_eq!(placeness(f64::NEG_INFINITY, 100.0).log_value, 0.0);
        let sat = placeness(0.0, 100.0);
        assert!(sat.saturated);
        assert_eq!(sat.log_value, 100.0 / SATURATION_EPSILON);
        assert!(placeness(3.0, 100.0).saturated);
    }

    #[test]
    fn floor_clamps_eigenvalues() {
        let c = Cov2::new(4.0, 1.9, 1.0).with_floor(1.0);
        let (lo, hi) = c.eigenvalues();
        assert!(lo >= 1.0 - 1e-12 && hi > 4.0);
        assert_eq!(Cov2::new(0.0, 0.0, 0.0).with_floor(0.5), Cov2::isotropic(0.5));
        let untouched = Cov2::new(9.0, 2.0, 5.0);
        assert_eq!(untouched.with_floor(1.0), untouched);
    }

    #[test]
    fn identical_positions_collapse_to_floor() {
        let q = PlanarPoint::new(12.5, -3.25);
        let cfg = FitConfig::default();
        let m = fit_word("w", &vec![q; 20], &cfg).unwrap();
        for c in &m.components {
            assert_eq!(c.mean, q);
            assert_eq!(c.covariance, Cov2::isotropic(cfg.covariance_floor));
        }
        assert_eq!(m.components.map(|c| c.weight), [1.0, 0.0, 0.0]);
        assert_eq!(m.log_placeness[1..], [0.0, 0.0]);
        assert!(!m.saturated);
    }

    #[test]
    fn insufficient_support_and_bad_k() {
        let cfg = FitConfig::default();
        let pts = vec![PlanarPoint::default(); 9];
        assert!(matches!(fit_word("w", &pts, &cfg), Err(ModelError::InsufficientSupport { have: 9, need: 10, .. })));
        let bad = FitConfig { k: 4, ..cfg };
        assert!(matches!(fit_word("w", &pts, &bad), Err(ModelError::InvalidComponentCount(4))));
    }

    #[test]
    fn small_support_reduces_k() {
        assert_eq!(effective_k(3, 10, 5), 2);
        assert_eq!(effective_k(3, 14, 5), 2);
        assert_eq!(effective_k(3, 15, 5), 3);
        assert_eq!(effective_k(3, 4, 5), 1);
        assert_eq!(effective_k(1, 100, 5), 1);
    }

    #[test]
    fn padding_keeps_three_slots_and_unit_mass() {
        let pts: Vec<_> = (0..12).map(|i| PlanarPoint::new((i % 2) as f64 * 300.0, (i / 2) as f64)).collect();
        let m = fit_word("w", &pts, &FitConfig::default()).unwrap();
        let total: f64 = m.components.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(m.components[2].weight, 0.0);
        assert_eq!(m.components[2].mean, m.components[0].mean);
        assert!(m.log_placeness.windows(2).all(|w| w[0] >= w[1]));
    }
}
