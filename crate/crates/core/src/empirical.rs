//! Exact Wasserstein distances between empirical measures on the real line.
//!
//! Two kernels are provided. For uniform samples of equal size the optimal
//! coupling matches order statistics, so `W_p^p = mean |x_(i) - y_(i)|^p`.
//! For arbitrary weights the quantile functions are piecewise constant, and
//! merging the two cumulative-weight breakpoint sequences integrates
//! `|F^-1 - G^-1|^p` exactly. The merge also yields the optimal coupling,
//! which the weighted max-sliced ascent needs for its subgradients.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Weight sums within this distance of one are renormalized; others rejected.
pub const WEIGHT_RENORMALIZE_TOL: f64 = 1e-9;

/// Largest sample size accepted by [`brute_force_wp_pow`].
pub const BRUTE_FORCE_MAX_N: usize = 8;

/// A weighted sample on the real line (the pushforward of an empirical
/// measure under a projection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample1D {
    values: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl Sample1D {
    /// Uniformly weighted sample.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        check_finite(&values)?;
        let w = 1.0 / values.len() as f64;
        let weights = vec![w; values.len()];
        Ok(Self { values, weights, uniform: true })
    }

    /// Explicitly weighted sample. Weights must be nonnegative and sum to one
    /// up to [`WEIGHT_RENORMALIZE_TOL`]; small deviations are renormalized.
    pub fn weighted(values: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        if values.len() != weights.len() {
            return Err(Error::LengthMismatch { left: values.len(), right: weights.len() });
        }
        check_finite(&values)?;
        normalize_weights(&mut weights)?;
        Ok(Self { values, weights, uniform: false })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether the sample was built with uniform weights.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Stable sort by value, permuting weights along.
    pub fn canonicalize(&mut self) {
        let order = sorted_order(&self.values);
        self.values = order.iter().map(|&i| self.values[i]).collect();
        self.weights = order.iter().map(|&i| self.weights[i]).collect();
    }

    pub fn is_sorted(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("non-finite value in sample"))
    }
}

/// Validates a weight vector in place: nonnegative, finite, and summing to
/// one within [`WEIGHT_RENORMALIZE_TOL`] (then renormalized exactly).
pub fn normalize_weights(weights: &mut [f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidWeights(format!("weight {w} is negative or non-finite")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_RENORMALIZE_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {total}, expected 1")));
    }
    if total != 1.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(())
}

/// Indices that stably sort `values` ascending.
pub fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// `|x|^p` with the common exponents special-cased.
#[inline]
pub fn pow_abs(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x.abs()
    } else if p == 2.0 {
        x * x
    } else {
        x.abs().powf(p)
    }
}

pub(crate) fn check_order(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("order p must be >= 1, got {p}")))
    }
}

/// Order-statistics kernel: both slices sorted ascending and of equal length.
pub fn wp_pow_sorted(xs: &[f64], ys: &[f64], p: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let total: f64 = xs.iter().zip(ys).map(|(x, y)| pow_abs(x - y, p)).sum();
    total / xs.len() as f64
}

/// `W_p^p` between two uniform samples of equal size via order statistics.
pub fn wp_pow_equal(xs: &Sample1D, ys: &Sample1D, p: f64) -> Result<f64> {
    check_order(p)?;
    if !xs.is_uniform() || !ys.is_uniform() {
        return Err(Error::invalid("order-statistics kernel needs uniform weights"));
    }
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    let mut a = xs.values.clone();
    let mut b = ys.values.clone();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(wp_pow_sorted(&a, &b, p))
}

/// One atom of a coupling between two weighted samples, indexed into the
/// samples' original (unsorted) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingAtom {
    pub x: usize,
    pub y: usize,
    pub mass: f64,
}

/// The monotone (quantile) coupling between two weighted samples.
///
/// Atoms come out in increasing quantile order. Zero-mass atoms are skipped.
pub fn quantile_coupling(xs: &Sample1D, ys: &Sample1D) -> Vec<CouplingAtom> {
    let ox = sorted_order(&xs.values);
    let oy = sorted_order(&ys.values);
    quantile_coupling_ordered(&ox, &xs.weights, &oy, &ys.weights)
}

/// Merge step of [`quantile_coupling`] given precomputed sort orders.
pub(crate) fn quantile_coupling_ordered(
    ox: &[usize],
    wx: &[f64],
    oy: &[usize],
    wy: &[f64],
) -> Vec<CouplingAtom> {
    let mut atoms = Vec::with_capacity(ox.len() + oy.len());
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (wx[ox[0]], wy[oy[0]]);
    while i < ox.len() && j < oy.len() {
        let mass = ra.min(rb);
        if mass > 0.0 {
            atoms.push(CouplingAtom { x: ox[i], y: oy[j], mass });
        }
        // Whichever side runs out first advances; exact ties advance both.
        let (next_a, next_b) = (ra <= rb, rb <= ra);
        ra -= mass;
        rb -= mass;
        if next_a {
            i += 1;
            if i < ox.len() {
                ra = wx[ox[i]];
            }
        }
        if next_b {
            j += 1;
            if j < oy.len() {
                rb = wy[oy[j]];
            }
        }
    }
    atoms
}

/// `W_p^p` between weighted samples as the quantile-coupling integral.
pub fn wp_pow_weighted(xs: &Sample1D, ys: &Sample1D, p: f64) -> Result<f64> {
    check_order(p)?;
    Ok(quantile_coupling(xs, ys)
        .iter()
        .map(|a| a.mass * pow_abs(xs.values[a.x] - ys.values[a.y], p))
        .sum())
}

/// `W_1` as the integral of the absolute CDF difference.
pub fn w1_cdf(xs: &Sample1D, ys: &Sample1D) -> Result<f64> {
    let mut events: Vec<(f64, f64)> = xs
        .values
        .iter()
        .zip(&xs.weights)
        .map(|(&v, &w)| (v, w))
        .chain(ys.values.iter().zip(&ys.weights).map(|(&v, &w)| (v, -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

/// Minimum of `mean |x_i - y_sigma(i)|^p` over all permutations. Test oracle;
/// refuses `n > 8`.
pub fn brute_force_wp_pow(xs: &Sample1D, ys: &Sample1D, p: f64) -> Result<f64> {
    check_order(p)?;
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::LengthMismatch { left: n, right: ys.len() });
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge(format!(
            "brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    let best = (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| pow_abs(xs.values[i] - ys.values[j], p))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best / n as f64)
}

/// Per-cell moments of the standard normal over the quantile cells
/// `((i-1)/n, i/n]`, used to integrate an empirical quantile function
/// against a Gaussian one in closed form.
#[derive(Debug, Clone)]
pub struct NormalQuantileCells {
    /// Conditional mean of Z on each cell.
    mean: Vec<f64>,
    /// `n * ∫ (Z - cell mean)^2` over each cell (cell mass is 1/n).
    spread: f64,
}

impl NormalQuantileCells {
    pub fn new(n: usize) -> Self {
        let std = Normal::standard();
        let pdf = |z: f64| {
            if z.is_finite() {
                (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
            } else {
                0.0
            }
        };
        let zpdf = |z: f64| if z.is_finite() { z * pdf(z) } else { 0.0 };
        let mass = 1.0 / n as f64;
        let z: Vec<f64> = (0..=n)
            .map(|i| match i {
                0 => f64::NEG_INFINITY,
                i if i == n => f64::INFINITY,
                i => std.inverse_cdf(i as f64 / n as f64),
            })
            .collect();
        let mut mean = Vec::with_capacity(n);
        let mut spread = 0.0;
        for k in 0..n {
            let (a, b) = (z[k], z[k + 1]);
            let m1 = pdf(a) - pdf(b);
            let m2 = mass + zpdf(a) - zpdf(b);
            let mu = m1 / mass;
            mean.push(mu);
            spread += (m2 - m1 * mu).max(0.0);
        }
        Self { mean, spread }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Exact `W_2^2` between the uniform empirical measure on `sorted` and
/// `N(mean, sd^2)`.
pub fn w2_pow_to_normal(sorted: &[f64], mean: f64, sd: f64, cells: &NormalQuantileCells) -> Result<f64> {
    if sorted.len() != cells.len() {
        return Err(Error::LengthMismatch { left: sorted.len(), right: cells.len() });
    }
    if sd.is_nan() || sd < 0.0 {
        return Err(Error::invalid("standard deviation must be nonnegative"));
    }
    let n = sorted.len() as f64;
    let gap: f64 = sorted
        .iter()
        .zip(&cells.mean)
        .map(|(x, mu)| {
            let r = x - mean - sd * mu;
            r * r
        })
        .sum();
    Ok(gap / n + sd * sd * cells.spread)
}
