use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Cov2, FitConfig, GaussianComponent};
use crate::geo::PlanarPoint;

const LLOYD_ITERS: usize = 25;

/// Result of fitting a mixture with EM.
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub components: Vec<GaussianComponent>,
    /// Log-likelihood of the parameters entering each iteration, in order.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

fn dist2(a: PlanarPoint, b: PlanarPoint) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    dx * dx + dy * dy
}

/// k-means++ seeding. Returns fewer than `k` centres when the points have
/// fewer than `k` distinct positions.
pub fn kmeans_plus_plus(points: &[PlanarPoint], k: usize, rng: &mut impl Rng) -> Vec<PlanarPoint> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    let mut nearest: Vec<f64> = points.iter().map(|&p| dist2(p, centres[0])).collect();
    while centres.len() < k {
        let total: f64 = nearest.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // Rounding can run `target` past the end; fall back to the last positive weight.
        if nearest[pick] == 0.0 {
            pick = nearest.iter().rposition(|&d| d > 0.0).expect("positive total");
        }
        let c = points[pick];
        centres.push(c);
        for (n, &p) in nearest.iter_mut().zip(points) {
            *n = n.min(dist2(p, c));
        }
    }
    centres
}

fn nearest_centre(p: PlanarPoint, centres: &[PlanarPoint]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centres.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn lloyd(points: &[PlanarPoint], mut centres: Vec<PlanarPoint>) -> (Vec<PlanarPoint>, Vec<usize>) {
    let mut assign: Vec<usize> = points.iter().map(|&p| nearest_centre(p, &centres)).collect();
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![(0.0, 0.0, 0usize); centres.len()];
        for (&p, &a) in points.iter().zip(&assign) {
            sums[a].0 += p.x;
            sums[a].1 += p.y;
            sums[a].2 += 1;
        }
        for (c, &(sx, sy, n)) in centres.iter_mut().zip(&sums) {
            if n > 0 {
                *c = PlanarPoint::new(sx / n as f64, sy / n as f64);
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest_centre(p, &centres)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centres, assign)
}

fn scatter<'a>(points: impl Iterator<Item = (&'a PlanarPoint, f64)>, mean: PlanarPoint, total: f64) -> Cov2 {
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for (p, w) in points {
        let (dx, dy) = (p.x - mean.x, p.y - mean.y);
        xx += w * dx * dx;
        xy += w * dx * dy;
        yy += w * dy * dy;
    }
    Cov2::new(xx / total, xy / total, yy / total)
}

fn initial_components(points: &[PlanarPoint], k: usize, rng: &mut impl Rng, floor: f64) -> Vec<GaussianComponent> {
    let n = points.len() as f64;
    let seeds = kmeans_plus_plus(points, k, rng);
    let (centres, assign) = lloyd(points, seeds);

    let global_mean =
        PlanarPoint::new(points.iter().map(|p| p.x).sum::<f64>() / n, points.iter().map(|p| p.y).sum::<f64>() / n);
    let global = scatter(points.iter().map(|p| (p, 1.0)), global_mean, n).with_floor(floor);

    let mut comps = Vec::with_capacity(centres.len());
    for (j, &centre) in centres.iter().enumerate() {
        let members = || points.iter().zip(&assign).filter(move |(_, &a)| a == j).map(|(p, _)| (p, 1.0));
        let count = members().count();
        if count == 0 {
            continue;
        }
        let covariance = if count >= 2 { scatter(members(), centre, count as f64).with_floor(floor) } else { global };
        comps.push(GaussianComponent { mean: centre, covariance, weight: count as f64 / n });
    }
    comps
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// E-step: fills `resp` (row-major n×k) and returns the total log-likelihood.
fn expectation(points: &[PlanarPoint], comps: &[GaussianComponent], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let mut ll = 0.0;
    let mut row = vec![0.0; k];
    for (i, p) in points.iter().enumerate() {
        for (r, c) in row.iter_mut().zip(comps) {
            *r = c.weight.ln() + c.covariance.log_density(p.x - c.mean.x, p.y - c.mean.y);
        }
        let lse = log_sum_exp(&row);
        ll += lse;
        for (j, &r) in row.iter().enumerate() {
            resp[i * k + j] = (r - lse).exp();
        }
    }
    ll
}

fn maximization(points: &[PlanarPoint], comps: &mut [GaussianComponent], resp: &[f64], floor: f64) {
    let k = comps.len();
    let n = points.len() as f64;
    for (j, comp) in comps.iter_mut().enumerate() {
        let weights = || points.iter().enumerate().map(move |(i, p)| (p, resp[i * k + j]));
        let nk: f64 = weights().map(|(_, r)| r).sum();
        comp.weight = nk / n;
        // A starved component keeps its shape; only its weight follows the data.
        if nk <= 1e-12 * n {
            continue;
        }
        let mean = PlanarPoint::new(
            weights().map(|(p, r)| r * p.x).sum::<f64>() / nk,
            weights().map(|(p, r)| r * p.y).sum::<f64>() / nk,
        );
        comp.mean = mean;
        comp.covariance = scatter(weights(), mean, nk).with_floor(floor);
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
}

/// Fits up to `k` components with k-means++ seeded EM.
///
/// Deterministic for a given `seed` and point order. The log-likelihood is
/// checked to be non-decreasing at every iteration.
pub fn fit_mixture(points: &[PlanarPoint], k: usize, seed: u64, config: &FitConfig) -> MixtureFit {
    assert!(!points.is_empty(), "cannot fit an empty point set");
    let floor = config.covariance_floor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps = initial_components(points, k, &mut rng, floor);
    let mut resp = vec![0.0; points.len() * comps.len()];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let n = points.len() as f64;

    for _ in 0..config.max_iter {
        let ll = expectation(points, &comps, &mut resp);
        if let Some(&prev) = trace.last() {
            debug_assert!(ll >= prev - 1e-9 * prev.abs().max(1.0), "EM log-likelihood decreased: {prev} -> {ll}");
            trace.push(ll);
            if (ll - prev) / n < config.tol_per_point {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        maximization(points, &mut comps, &resp, floor);
    }
    if !converged {
        trace.push(expectation(points, &comps, &mut resp));
    }
    MixtureFit { components: comps, log_likelihood: trace, converged }
}
