//! Monte Carlo sliced Wasserstein estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{check_order, pow_abs, quantile_coupling_ordered, sorted_order, wp_pow_sorted};
use crate::error::{Error, Result};
use crate::geometry::{project_into, sample_sphere, PointCloud};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub p: f64,
    pub seed: u64,
}

/// Result of [`estimate_swp`].
///
/// `std_error` is the i.i.d. standard error over projections. It measures the
/// Monte Carlo error only, not the gap between the empirical and population
/// measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub value_pow: f64,
    pub value: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_projection: Vec<f64>,
    pub std_error: f64,
    pub meta: EstimateMeta,
}

impl EstimateReport {
    fn from_values(per_projection: Vec<f64>, meta: EstimateMeta) -> Self {
        let m = per_projection.len() as f64;
        let value_pow = per_projection.iter().sum::<f64>() / m;
        let std_error = if per_projection.len() > 1 {
            let ss: f64 = per_projection.iter().map(|v| (v - value_pow).powi(2)).sum();
            (ss / (m - 1.0)).sqrt() / m.sqrt()
        } else {
            0.0
        };
        Self { value_pow, value: value_pow.max(0.0).powf(1.0 / meta.p), per_projection, std_error, meta }
    }
}

/// Evaluates `w_p^p(θ)` for a fixed pair of clouds, reusing buffers between
/// directions.
///
/// Uniform clouds of equal size use the order-statistics kernel; anything else
/// goes through the quantile merge.
#[derive(Debug, Clone)]
pub struct ProjectedPair<'a> {
    x: &'a PointCloud,
    y: &'a PointCloud,
    weights: Option<(Vec<f64>, Vec<f64>)>,
    px: Vec<f64>,
    py: Vec<f64>,
}

impl<'a> ProjectedPair<'a> {
    pub fn new(x: &'a PointCloud, y: &'a PointCloud) -> Result<Self> {
        y.check_dim(x.dim())?;
        let weights = if x.is_uniform() && y.is_uniform() && x.n() == y.n() {
            None
        } else {
            Some((x.weight_vec(), y.weight_vec()))
        };
        Ok(Self { x, y, weights, px: Vec::with_capacity(x.n()), py: Vec::with_capacity(y.n()) })
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// `W_p^p` between the projections onto `theta` (any vector, not
    /// necessarily unit).
    pub fn wp_pow(&mut self, theta: &[f64], p: f64) -> f64 {
        project_into(self.x, theta, &mut self.px);
        project_into(self.y, theta, &mut self.py);
        match &self.weights {
            None => {
                self.px.sort_unstable_by(f64::total_cmp);
                self.py.sort_unstable_by(f64::total_cmp);
                wp_pow_sorted(&self.px, &self.py, p)
            }
            Some((wx, wy)) => {
                let ox = sorted_order(&self.px);
                let oy = sorted_order(&self.py);
                quantile_coupling_ordered(&ox, wx, &oy, wy)
                    .iter()
                    .map(|a| a.mass * pow_abs(self.px[a.x] - self.py[a.y], p))
                    .sum()
            }
        }
    }
}

/// `(1/m) Σ_j W_p^p(θ_j♯X, θ_j♯Y)` over `m` uniform directions.
///
/// Direction `j` is drawn from substream `j` of `seed` and the per-direction
/// values are reduced in index order, so the report does not depend on the
/// size of the rayon pool.
pub fn estimate_swp(x: &PointCloud, y: &PointCloud, p: f64, m: usize, seed: u64) -> Result<EstimateReport> {
    check_order(p)?;
    if m < 1 {
        return Err(Error::invalid("number of projections m must be >= 1"));
    }
    let pair = ProjectedPair::new(x, y)?;
    let d = x.dim();
    let per_projection: Vec<f64> = (0..m)
        .into_par_iter()
        .map_init(
            || pair.clone(),
            |pair, j| {
                let theta = sample_sphere(d, &mut rng::stream(seed, j as u64)).expect("d >= 1");
                pair.wp_pow(theta.as_slice(), p)
            },
        )
        .collect();
    Ok(EstimateReport::from_values(per_projection, EstimateMeta { n: x.n(), m, d, p, seed }))
}

/// The two rate factors `1/√(md)` and `(log n)^{1{p=2}} / n^{(p∧2)/2}`.
///
/// These are rates up to unknown constants, useful for slope diagnostics, and
/// not error bounds.
pub fn theoretical_rate_terms(p: f64, m: f64, n: f64, d: f64) -> (f64, f64) {
    let mc = 1.0 / (m * d).sqrt();
    let log_factor = if p == 2.0 { n.ln() } else { 1.0 };
    let emp = log_factor / n.powf(p.min(2.0) / 2.0);
    (mc, emp)
}
