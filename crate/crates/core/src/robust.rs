//! Contamination-robust estimation: spectral filtering under a bounded
//! covariance assumption, weighted max-sliced `W_1`, and an exact `W_1` with
//! couplings that keep mass shared at an anchor point in place.

use ndarray::{s, Array1, Array2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{quantile_coupling_ordered, sorted_order};
use crate::error::{Error, Result};
use crate::geometry::{norm, project_ball, project_into, weighted_row_sum, Direction, PointCloud};
use crate::max_sliced::{cosine, initial_point, lipschitz_upper_bound, Init};
use crate::rng;
use crate::transport::{exact_ot, MAX_TRANSPORT_ATOMS};

/// Relative tolerance of the power iteration on the eigenvector.
pub const POWER_TOL: f64 = 1e-6;
pub const POWER_MAX_ITERS: usize = 500;
/// Largest contamination fraction with a guarantee; larger values are
/// accepted with a warning.
pub const MAX_GUARANTEED_EPS: f64 = 1.0 / 12.0;
pub const DEFAULT_THRESHOLD_MULT: f64 = 9.0;
/// Distance below which an atom counts as sitting on the anchor.
pub const ANCHOR_TOL: f64 = 1e-9;

const COV_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedMoments {
    pub mean: Vec<f64>,
    pub top_eigenvalue: f64,
    pub top_eigenvector: Direction,
}

fn check_weights(cloud: &PointCloud, w: &[f64]) -> Result<f64> {
    if w.len() != cloud.n() {
        return Err(Error::LengthMismatch { left: cloud.n(), right: w.len() });
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights("total weight is zero".into()));
    }
    Ok(total)
}

/// `Σ w_i (x_i - m)(x_i - m)ᵀ / Σ w`, accumulated in row chunks.
pub fn weighted_covariance(cloud: &PointCloud, w: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
    let total = check_weights(cloud, w)?;
    let x = cloud.points();
    let d = cloud.dim();
    let mut mean = Array1::<f64>::zeros(d);
    for (row, wi) in x.rows().into_iter().zip(w) {
        if *wi > 0.0 {
            mean.scaled_add(*wi / total, &row);
        }
    }
    let mut cov = Array2::<f64>::zeros((d, d));
    let mut start = 0;
    while start < cloud.n() {
        let end = (start + COV_CHUNK).min(cloud.n());
        let mut block = x.slice(s![start..end, ..]).to_owned();
        for (mut row, wi) in block.rows_mut().into_iter().zip(&w[start..end]) {
            let scale = (wi / total).sqrt();
            row -= &mean;
            row *= scale;
        }
        cov += &block.t().dot(&block);
        start = end;
    }
    Ok((mean.to_vec(), cov))
}

/// Leading eigenpair of a symmetric PSD matrix by power iteration from a
/// fixed start vector.
///
/// The iteration runs on `(C / ‖C‖_F)^4`, which has the same eigenvectors and
/// fourth-powered eigenvalue ratios, so nearly tied top eigenvalues still
/// separate within the iteration budget. It stops once the vector moves by
/// less than [`POWER_TOL`]. If that never happens within [`POWER_MAX_ITERS`]
/// the top eigenvalue is (nearly) repeated and the vector wanders inside its
/// eigenspace; the result is accepted when the Rayleigh quotient has settled
/// to the same relative tolerance and is a numerical failure otherwise.
pub fn top_eigenpair(c: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
    let d = c.nrows();
    let mut r = rng::root(0x0e16);
    let mut v = Array1::from_shape_fn(d, |_| r.random_range(0.5..1.5));
    v /= norm(v.as_slice().expect("contiguous"));
    let scale = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok((0.0, v.to_vec()));
    }
    if !scale.is_finite() {
        return Err(Error::Numerical("covariance has non-finite entries".into()));
    }
    let c1 = c / scale;
    let c2 = c1.dot(&c1);
    let m = c2.dot(&c2);
    let mut lambda = v.dot(&c.dot(&v));
    let mut change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let mv = m.dot(&v);
        let len = norm(mv.as_slice().expect("contiguous"));
        if len == 0.0 || !len.is_finite() {
            // The start vector is orthogonal to every eigenvector with a
            // nonzero eigenvalue, or the fourth power underflowed.
            break;
        }
        let next = mv / len;
        let moved = norm((&next - &v).as_slice().expect("contiguous"));
        v = next;
        let updated = v.dot(&c.dot(&v));
        change = (updated - lambda).abs();
        lambda = updated;
        if moved < POWER_TOL || change <= 1e-12 * lambda.abs() {
            return Ok((lambda, v.to_vec()));
        }
    }
    if change <= POWER_TOL * lambda.abs() {
        Ok((lambda, v.to_vec()))
    } else {
        Err(Error::Numerical(format!("power iteration did not converge in {POWER_MAX_ITERS} iterations")))
    }
}

/// Weighted mean and leading eigenpair of the weighted covariance.
pub fn weighted_moments(cloud: &PointCloud, w: &[f64]) -> Result<WeightedMoments> {
    let (mean, cov) = weighted_covariance(cloud, w)?;
    let (top_eigenvalue, v) = top_eigenpair(&cov)?;
    Ok(WeightedMoments { mean, top_eigenvalue, top_eigenvector: Direction::new(v)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub epsilon: f64,
    pub sigma2: f64,
    pub threshold_mult: f64,
}

impl FilterConfig {
    pub fn new(epsilon: f64, sigma2: f64) -> Self {
        Self { epsilon, sigma2, threshold_mult: DEFAULT_THRESHOLD_MULT }
    }
}

/// Why the filter loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStop {
    /// Top eigenvalue fell to the threshold.
    Threshold,
    /// Removed mass reached `3ε`.
    MassCap,
    /// `10n` iterations.
    IterationCap,
    /// All remaining points have zero score along the top direction.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterWeights {
    /// Normalized weights, one per input row.
    pub w: Vec<f64>,
    /// Input mass deleted by the filter (`1 - Σ u` before renormalizing).
    pub removed_mass: f64,
    pub iterations: usize,
    /// Top eigenvalue of the weighted covariance at termination.
    pub top_eigenvalue: f64,
    pub stop: FilterStop,
    /// Set when `ε` lies outside the guarantee regime.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Soft spectral filter: while the weighted covariance has an eigenvalue
/// above `threshold_mult · σ²`, scores `τ_i = ⟨v, x_i - mean⟩²` along the top
/// eigenvector and updates `u_i ← u_i (1 - τ_i / τ_max)`. Total deletion is
/// capped at `3ε` by shortening the last step.
pub fn spectral_filter(cloud: &PointCloud, cfg: &FilterConfig) -> Result<FilterWeights> {
    if !(cfg.sigma2 > 0.0 && cfg.sigma2.is_finite()) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {}", cfg.sigma2)));
    }
    if !(cfg.threshold_mult > 0.0 && cfg.threshold_mult.is_finite()) {
        return Err(Error::invalid("threshold_mult must be positive"));
    }
    if !(0.0..0.5).contains(&cfg.epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [0, 1/2), got {}", cfg.epsilon)));
    }
    let warning = (cfg.epsilon > MAX_GUARANTEED_EPS).then(|| {
        format!("epsilon = {} exceeds 1/12; no guarantee applies", cfg.epsilon)
    });
    let n = cloud.n();
    let threshold = cfg.threshold_mult * cfg.sigma2;
    let cap = 3.0 * cfg.epsilon;
    let mut u = cloud.weight_vec();
    let mut removed = 0.0;
    let mut iterations = 0;
    let mut scores = vec![0.0; n];
    let mut centered = Vec::with_capacity(n);
    let (stop, top_eigenvalue) = loop {
        let total: f64 = u.iter().sum();
        let w: Vec<f64> = u.iter().map(|v| v / total).collect();
        let m = weighted_moments(cloud, &w)?;
        if m.top_eigenvalue <= threshold {
            break (FilterStop::Threshold, m.top_eigenvalue);
        }
        if removed >= cap {
            break (FilterStop::MassCap, m.top_eigenvalue);
        }
        if iterations >= 10 * n {
            break (FilterStop::IterationCap, m.top_eigenvalue);
        }
        let v = m.top_eigenvector.as_slice();
        project_into(cloud, v, &mut centered);
        let shift: f64 = v.iter().zip(&m.mean).map(|(a, b)| a * b).sum();
        let mut tau_max: f64 = 0.0;
        for i in 0..n {
            let t = (centered[i] - shift).powi(2);
            scores[i] = t;
            if u[i] > 0.0 {
                tau_max = tau_max.max(t);
            }
        }
        if tau_max <= 0.0 {
            break (FilterStop::Degenerate, m.top_eigenvalue);
        }
        let step: f64 = (0..n).map(|i| u[i] * scores[i] / tau_max).sum();
        let scale = if removed + step > cap { (cap - removed) / step } else { 1.0 };
        for i in 0..n {
            let cut = scale * u[i] * scores[i] / tau_max;
            u[i] = (u[i] - cut).max(0.0);
        }
        removed = if scale < 1.0 { cap } else { removed + step };
        iterations += 1;
    };
    let total: f64 = u.iter().sum();
    Ok(FilterWeights {
        w: u.iter().map(|v| v / total).collect(),
        removed_mass: removed,
        iterations,
        top_eigenvalue,
        stop,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub iterations: usize,
    /// `c` in `α_t = c/√(t+1)`; `None` uses `1 / L̂` with `L̂` the `p = 1`
    /// Lipschitz bound.
    pub step_scale: Option<f64>,
    /// Random restarts on top of the mean-gap start.
    pub restarts: usize,
    pub seed: u64,
}

impl AscentConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self { iterations, step_scale: None, restarts: 0, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    pub theta: Direction,
    /// `W_1` between the projections onto `theta`; a lower bound on `MSW_1`.
    pub value: f64,
}

struct AscentWorkspace<'a> {
    x: &'a PointCloud,
    y: &'a PointCloud,
    wx: Vec<f64>,
    wy: Vec<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl<'a> AscentWorkspace<'a> {
    fn new(x: &'a PointCloud, y: &'a PointCloud) -> Self {
        Self {
            x,
            y,
            wx: x.weight_vec(),
            wy: y.weight_vec(),
            px: Vec::new(),
            py: Vec::new(),
            a: vec![0.0; x.n()],
            b: vec![0.0; y.n()],
        }
    }

    /// `(W_1 of the projections, ascent direction)`.
    fn eval(&mut self, theta: &[f64]) -> (f64, Vec<f64>) {
        project_into(self.x, theta, &mut self.px);
        project_into(self.y, theta, &mut self.py);
        let ox = sorted_order(&self.px);
        let oy = sorted_order(&self.py);
        self.a.fill(0.0);
        self.b.fill(0.0);
        let mut value = 0.0;
        for atom in quantile_coupling_ordered(&ox, &self.wx, &oy, &self.wy) {
            let r = self.px[atom.x] - self.py[atom.y];
            value += atom.mass * r.abs();
            let g = if r > 0.0 {
                atom.mass
            } else if r < 0.0 {
                -atom.mass
            } else {
                0.0
            };
            self.a[atom.x] += g;
            self.b[atom.y] += g;
        }
        let sx = weighted_row_sum(self.x, &self.a);
        let sy = weighted_row_sum(self.y, &self.b);
        (value, sx.iter().zip(sy.iter()).map(|(u, v)| u - v).collect())
    }
}

fn ascent_run(ws: &mut AscentWorkspace<'_>, start: Vec<f64>, iterations: usize, c: f64) -> (Vec<f64>, f64) {
    let mut theta = project_ball(&start);
    let mut best = (theta.clone(), f64::NEG_INFINITY);
    for t in 0..=iterations {
        let (value, xi) = ws.eval(&theta);
        let len = norm(&theta);
        if len > 0.0 && value / len > best.1 {
            best = (theta.clone(), value / len);
        }
        if t == iterations {
            break;
        }
        let step = c / ((t + 1) as f64).sqrt();
        let moved: Vec<f64> = theta.iter().zip(&xi).map(|(th, g)| th + step * g).collect();
        theta = project_ball(&moved);
    }
    best
}

/// Projected subgradient ascent on `θ ↦ W_1(θ♯X, θ♯Y)` for weighted clouds,
/// started at the mean-gap direction plus `restarts` random directions. The
/// best direction over all runs is returned; its value is a certified lower
/// bound on `MSW_1`.
pub fn msw1_weighted_ascent(x: &PointCloud, y: &PointCloud, cfg: &AscentConfig) -> Result<AscentResult> {
    y.check_dim(x.dim())?;
    if cfg.iterations < 1 {
        return Err(Error::invalid("iteration count must be >= 1"));
    }
    let c = match cfg.step_scale {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(Error::invalid(format!("step scale must be positive, got {c}"))),
        None => {
            let l = lipschitz_upper_bound(x, y, 1.0);
            if l > 0.0 {
                1.0 / l
            } else {
                1.0
            }
        }
    };
    let runs: Vec<(Vec<f64>, f64)> = (0..=cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                initial_point(&Init::MeanGap, x, y, cfg.seed)
            } else {
                initial_point(&Init::Random, x, y, rng::derive_seed(cfg.seed, &[0xa5c, r as u64]))
            }?;
            let mut ws = AscentWorkspace::new(x, y);
            Ok(ascent_run(&mut ws, start, cfg.iterations, c))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.1 > runs[best].1 {
            best = i;
        }
    }
    let (theta, value) = runs.into_iter().nth(best).expect("at least one run");
    if !value.is_finite() {
        // Every iterate sat at the origin, which only happens for X = Y = 0.
        let theta = initial_point(&Init::Random, x, y, cfg.seed)?;
        return Ok(AscentResult { theta: Direction::new(theta)?, value: 0.0 });
    }
    Ok(AscentResult { theta: Direction::new(theta)?, value })
}

/// Replaces all rows within [`ANCHOR_TOL`] of `anchor` by a single row
/// carrying their total weight (placed first). Exact for any transport
/// distance and for the spectral filter.
pub fn merge_anchor(cloud: &PointCloud, anchor: &[f64]) -> Result<PointCloud> {
    cloud.check_dim(anchor.len())?;
    let mut anchor_mass = 0.0;
    let mut keep = Vec::new();
    for i in 0..cloud.n() {
        if on_anchor(cloud, i, anchor) {
            anchor_mass += cloud.weight(i);
        } else {
            keep.push(i);
        }
    }
    if anchor_mass == 0.0 {
        return Ok(cloud.clone());
    }
    let d = cloud.dim();
    let mut points = Array2::<f64>::zeros((keep.len() + 1, d));
    points.row_mut(0).assign(&Array1::from(anchor.to_vec()));
    let mut weights = Vec::with_capacity(keep.len() + 1);
    weights.push(anchor_mass);
    for (k, &i) in keep.iter().enumerate() {
        points.row_mut(k + 1).assign(&cloud.row(i));
        weights.push(cloud.weight(i));
    }
    PointCloud::with_weights(points, weights)
}

/// Keeps every anchor row and a uniform random subset of at most
/// `max_off_anchor` other rows, rescaling the kept rows so the off-anchor
/// mass is preserved. Used to bring [`restricted_w1`] within its size limit.
pub fn thin_off_anchor<R: rand::Rng + ?Sized>(
    cloud: &PointCloud,
    anchor: &[f64],
    max_off_anchor: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    cloud.check_dim(anchor.len())?;
    let (on, off): (Vec<usize>, Vec<usize>) = (0..cloud.n()).partition(|&i| on_anchor(cloud, i, anchor));
    if off.len() <= max_off_anchor {
        return Ok(cloud.clone());
    }
    let off_mass: f64 = off.iter().map(|&i| cloud.weight(i)).sum();
    let mut picked = rand::seq::index::sample(rng, off.len(), max_off_anchor).into_vec();
    picked.sort_unstable();
    let kept: Vec<usize> = picked.iter().map(|&k| off[k]).collect();
    let kept_mass: f64 = kept.iter().map(|&i| cloud.weight(i)).sum();
    let rows: Vec<usize> = on.iter().copied().chain(kept.iter().copied()).collect();
    let scale = if kept_mass > 0.0 { off_mass / kept_mass } else { 0.0 };
    let weights: Vec<f64> = on
        .iter()
        .map(|&i| cloud.weight(i))
        .chain(kept.iter().map(|&i| cloud.weight(i) * scale))
        .collect();
    cloud.select(&rows)?.reweighted(weights)
}

fn on_anchor(cloud: &PointCloud, i: usize, anchor: &[f64]) -> bool {
    let gap: f64 = cloud.row(i).iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
    gap.sqrt() <= ANCHOR_TOL
}

/// Exact `W_1` over couplings that leave the mass shared at `anchor` in
/// place: `min(anchor mass of X, anchor mass of Y)` is removed from both
/// sides and the residual atoms are transported exactly.
///
/// Restricting couplings can only increase the optimal cost, so this is an
/// upper bound on `W_1`, equal to it when neither side has anchor mass.
pub fn restricted_w1(x: &PointCloud, y: &PointCloud, anchor: &[f64]) -> Result<f64> {
    y.check_dim(x.dim())?;
    x.check_dim(anchor.len())?;
    let residual = |cloud: &PointCloud| {
        let mut anchor_mass = 0.0;
        let mut rows = Vec::new();
        for i in 0..cloud.n() {
            let w = cloud.weight(i);
            if on_anchor(cloud, i, anchor) {
                anchor_mass += w;
            } else if w > 0.0 {
                rows.push(i);
            }
        }
        (anchor_mass, rows)
    };
    let (ax, rx) = residual(x);
    let (ay, ry) = residual(y);
    let shared = ax.min(ay);
    let (ex, ey) = (ax - shared, ay - shared);
    let size_x = rx.len() + usize::from(ex > 0.0);
    let size_y = ry.len() + usize::from(ey > 0.0);
    if size_x > MAX_TRANSPORT_ATOMS || size_y > MAX_TRANSPORT_ATOMS {
        return Err(Error::TooLarge(format!(
            "restricted W1 residual has {size_x} and {size_y} atoms (limit {MAX_TRANSPORT_ATOMS}); subsample the clouds"
        )));
    }
    // Atom lists: None stands for the leftover anchor mass.
    let atoms = |rows: &[usize], excess: f64, cloud: &PointCloud| {
        let mut ids: Vec<Option<usize>> = rows.iter().map(|&i| Some(i)).collect();
        let mut mass: Vec<f64> = rows.iter().map(|&i| cloud.weight(i)).collect();
        if excess > 0.0 {
            ids.push(None);
            mass.push(excess);
        }
        (ids, mass)
    };
    let (ix, mx) = atoms(&rx, ex, x);
    let (iy, my) = atoms(&ry, ey, y);
    let total: f64 = mx.iter().sum::<f64>().max(my.iter().sum::<f64>());
    if ix.is_empty() || iy.is_empty() || total <= 1e-12 {
        return Ok(0.0);
    }
    let coords = |id: Option<usize>, cloud: &PointCloud| -> Vec<f64> {
        match id {
            Some(i) => cloud.row(i).to_vec(),
            None => anchor.to_vec(),
        }
    };
    let px: Vec<Vec<f64>> = ix.iter().map(|&i| coords(i, x)).collect();
    let py: Vec<Vec<f64>> = iy.iter().map(|&j| coords(j, y)).collect();
    let plan = exact_ot(&mx, &my, |i, j| {
        px[i].iter().zip(&py[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    })?;
    Ok(plan.cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    /// `‖weighted mean - reference mean‖`.
    pub mean_gap: f64,
    /// Lower bound on `MSW_1` between the reweighted cloud and the reference.
    pub msw1_lower: f64,
    /// `msw1_lower / max(mean_gap, tiny)`.
    pub ratio: f64,
    pub theta: Direction,
}

/// Compares the reweighted cloud with a clean reference by mean gap and by
/// max-sliced `W_1`.
///
/// `msw1_lower` is the larger of the ascent value and the mean gap. The
/// ascent starts on the mean-gap direction, whose projected `W_1` already
/// dominates the mean gap, so the max only absorbs rounding.
pub fn resilience_report(
    points: &PointCloud,
    weights: &FilterWeights,
    reference: &PointCloud,
    cfg: &AscentConfig,
) -> Result<ResilienceReport> {
    if reference.n() == 0 {
        return Err(Error::invalid("empty reference"));
    }
    let filtered = points.reweighted(weights.w.clone())?;
    let gap: Vec<f64> = filtered.mean().iter().zip(reference.mean()).map(|(a, b)| a - b).collect();
    let mean_gap = norm(&gap);
    let ascent = msw1_weighted_ascent(&filtered, reference, cfg)?;
    let msw1_lower = ascent.value.max(mean_gap);
    let theta = if ascent.value >= mean_gap || mean_gap == 0.0 {
        ascent.theta
    } else {
        Direction::new(gap)?
    };
    Ok(ResilienceReport { mean_gap, msw1_lower, ratio: msw1_lower / mean_gap.max(1e-12), theta })
}

/// `|cos|` between a direction and a vector.
pub fn alignment(theta: &Direction, v: &[f64]) -> f64 {
    cosine(theta.as_slice(), v).abs()
}
