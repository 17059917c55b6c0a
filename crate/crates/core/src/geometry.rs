//! Directions on the unit sphere, point clouds, and projections.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::empirical::{normalize_weights, Sample1D};
use crate::error::{Error, Result};

/// A unit vector in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Normalizes `coords`; fails on a zero or non-finite vector.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let norm = norm(&coords);
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::invalid("direction must be a finite nonzero vector"));
        }
        Ok(Self(coords.into_iter().map(|c| c / norm).collect()))
    }

    /// The `j`-th standard basis vector of `R^d`.
    pub fn axis(d: usize, j: usize) -> Result<Self> {
        if j >= d {
            return Err(Error::invalid(format!("axis {j} out of range for d = {d}")));
        }
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Uniform draw from the sphere in `R^d` by normalizing a standard Gaussian.
pub fn sample_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Direction> {
    if d < 1 {
        return Err(Error::invalid("sphere dimension must be >= 1"));
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if norm(&g) > 0.0 {
            return Direction::new(g);
        }
    }
}

/// Euclidean projection onto the closed unit ball.
pub fn project_ball(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n <= 1.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// `E|Θ_1|^p` for `Θ` uniform on the sphere in `R^d`:
/// `Γ(d/2) Γ((p+1)/2) / (√π Γ((p+d)/2))`, evaluated in log space.
pub fn sphere_abs_moment(p: f64, d: usize) -> f64 {
    if d == 1 {
        return 1.0;
    }
    let d = d as f64;
    let log = ln_gamma(d / 2.0) + ln_gamma((p + 1.0) / 2.0)
        - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma((p + d) / 2.0);
    log.exp()
}

/// `n` points in `R^d` with optional probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    weights: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::invalid("point cloud needs n >= 1 points in d >= 1 dimensions"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite coordinate in point cloud"));
        }
        Ok(Self { points, weights: None })
    }

    pub fn with_weights(points: Array2<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != points.nrows() {
            return Err(Error::LengthMismatch { left: points.nrows(), right: weights.len() });
        }
        normalize_weights(&mut weights)?;
        let mut cloud = Self::new(points)?;
        cloud.weights = Some(weights);
        Ok(cloud)
    }

    /// Builds a cloud from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(points)
    }

    /// `n` copies of the same point.
    pub fn repeated(point: &[f64], n: usize) -> Result<Self> {
        let points = Array2::from_shape_fn((n, point.len()), |(_, j)| point[j]);
        Self::new(points)
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Explicit weights, if any.
    pub fn explicit_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    /// Weight of point `i` (1/n when uniform).
    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.n() as f64,
        }
    }

    /// Materialized weight vector.
    pub fn weight_vec(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.n() as f64; self.n()],
        }
    }

    /// Same points with new weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::with_weights(self.points.clone(), weights)
    }

    /// Drops explicit weights.
    pub fn unweighted(&self) -> Self {
        Self { points: self.points.clone(), weights: None }
    }

    /// Weighted mean.
    pub fn mean(&self) -> Vec<f64> {
        match &self.weights {
            None => self.points.mean_axis(Axis(0)).expect("n >= 1").to_vec(),
            Some(w) => {
                let w = ArrayView1::from(w.as_slice());
                self.points.t().dot(&w).to_vec()
            }
        }
    }

    /// Subset of rows, keeping (and renormalizing) weights when present.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let points = self.points.select(Axis(0), rows);
        match &self.weights {
            None => Self::new(points),
            Some(w) => {
                let mut sub: Vec<f64> = rows.iter().map(|&i| w[i]).collect();
                let total: f64 = sub.iter().sum();
                if total <= 0.0 {
                    return Err(Error::InvalidWeights("selected rows carry no mass".into()));
                }
                sub.iter_mut().for_each(|x| *x /= total);
                Self::with_weights(points, sub)
            }
        }
    }

    /// Applies `x -> a * x` to every point.
    pub fn scaled(&self, a: f64) -> Self {
        Self { points: &self.points * a, weights: self.weights.clone() }
    }

    /// Applies `x -> M x` to every point (`M` is `d x d`, row-major rows).
    pub fn transformed(&self, m: &Array2<f64>) -> Result<Self> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: m.nrows() });
        }
        Ok(Self { points: self.points.dot(&m.t()), weights: self.weights.clone() })
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim(), found: d })
        }
    }
}

/// Projected coordinates `θᵀx_i` without building a [`Sample1D`].
pub fn project_values(cloud: &PointCloud, theta: &[f64]) -> Vec<f64> {
    cloud.points.dot(&ArrayView1::from(theta)).to_vec()
}

/// Writes projected coordinates into `out`, reusing its allocation.
pub(crate) fn project_into(cloud: &PointCloud, theta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let theta = ArrayView1::from(theta);
    out.extend(cloud.points.rows().into_iter().map(|r| r.dot(&theta)));
}

/// The pushforward of the cloud's empirical measure under `x -> θᵀx`.
pub fn project(cloud: &PointCloud, theta: &Direction) -> Result<Sample1D> {
    cloud.check_dim(theta.dim())?;
    let values = project_values(cloud, theta.as_slice());
    match &cloud.weights {
        None => Sample1D::uniform(values),
        Some(w) => Sample1D::weighted(values, w.clone()),
    }
}

/// Same as [`project`] for a vector in the ball (not necessarily unit norm).
pub fn project_vector(cloud: &PointCloud, theta: &[f64]) -> Result<Sample1D> {
    cloud.check_dim(theta.len())?;
    let values = project_values(cloud, theta);
    match &cloud.weights {
        None => Sample1D::uniform(values),
        Some(w) => Sample1D::weighted(values, w.clone()),
    }
}

/// `Xᵀa` for a coefficient per point.
pub(crate) fn weighted_row_sum(cloud: &PointCloud, coeffs: &[f64]) -> Array1<f64> {
    cloud.points.t().dot(&ArrayView1::from(coeffs))
}
