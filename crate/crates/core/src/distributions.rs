//! Seeded samplers for the synthetic models used by the experiments, and
//! Huber-style contamination.
//!
//! A [`ModelSpec`] is the serializable description (`kind`, `d`,
//! `parameters`, `seed`). [`ModelSpec::sampler`] validates it once and
//! factors any covariance, producing a [`Sampler`] that draws rows.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// `N(mean, covariance)`; defaults to `N(0, I_d)`.
    Gaussian,
    /// Finite mixture of Gaussians given by `components`.
    GaussianMixture,
    /// `Unif([-a, a]^d)` with `a = half_width` (default 1).
    UniformCube,
    /// `T♯Unif([-1,1]^d)` with `T(x) = x + Σ_{i<k*} sign(x_i) e_i`.
    FragmentedHypercube,
    /// `(1 - ring_mass) δ_0 + ring_mass Unif(radius · S^{d-1})`.
    PointRing,
    /// `δ_location` (default the origin).
    PointMass,
    /// Each coordinate i.i.d. uniform on `levels` (default `{0, 6}`).
    ProductNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<MixtureComponent>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_star: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
}

/// Serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d: usize,
    #[serde(default)]
    pub parameters: ModelParameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Noise levels used when a product-noise model leaves `levels` unset.
pub const DEFAULT_NOISE_LEVELS: [f64; 2] = [0.0, 6.0];

impl ModelSpec {
    pub fn new(kind: ModelKind, d: usize) -> Self {
        Self { kind, d, parameters: ModelParameters::default(), seed: None }
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::new(ModelKind::Gaussian, d)
    }

    pub fn gaussian(mean: Vec<f64>, covariance: Option<Vec<Vec<f64>>>) -> Self {
        let mut spec = Self::new(ModelKind::Gaussian, mean.len());
        spec.parameters.mean = Some(mean);
        spec.parameters.covariance = covariance;
        spec
    }

    pub fn point_mass(location: Vec<f64>) -> Self {
        let mut spec = Self::new(ModelKind::PointMass, location.len());
        spec.parameters.location = Some(location);
        spec
    }

    pub fn point_ring(d: usize, ring_mass: f64, radius: f64) -> Self {
        let mut spec = Self::new(ModelKind::PointRing, d);
        spec.parameters.ring_mass = Some(ring_mass);
        spec.parameters.radius = Some(radius);
        spec
    }

    pub fn product_noise(d: usize) -> Self {
        Self::new(ModelKind::ProductNoise, d)
    }

    /// Validates the spec and precomputes covariance factors.
    pub fn sampler(&self) -> Result<Sampler> {
        let d = self.d;
        if d == 0 {
            return Err(Error::invalid("model dimension must be >= 1"));
        }
        let p = &self.parameters;
        let law = match self.kind {
            ModelKind::Gaussian => Law::Gaussian(GaussianLaw::new(d, p.mean.as_deref(), p.covariance.as_deref())?),
            ModelKind::GaussianMixture => {
                let comps = p
                    .components
                    .as_ref()
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| Error::invalid("gaussian-mixture needs components"))?;
                let weights: Vec<f64> = comps.iter().map(|c| c.weight).collect();
                if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
                    return Err(Error::InvalidWeights("mixture weights must be nonnegative".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidWeights(format!("mixture weights sum to {total}")));
                }
                let mut cumulative = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in &weights {
                    acc += w / total;
                    cumulative.push(acc);
                }
                let laws = comps
                    .iter()
                    .map(|c| GaussianLaw::new(d, c.mean.as_deref(), c.covariance.as_deref()))
                    .collect::<Result<Vec<_>>>()?;
                Law::Mixture { cumulative, laws }
            }
            ModelKind::UniformCube => {
                let a = p.half_width.unwrap_or(1.0);
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::invalid("half_width must be positive"));
                }
                Law::UniformCube { half_width: a }
            }
            ModelKind::FragmentedHypercube => {
                let k = p.k_star.unwrap_or(d.min(10));
                if k < 1 || k > d {
                    return Err(Error::invalid(format!("k_star must lie in [1, d = {d}], got {k}")));
                }
                Law::Fragmented { k_star: k }
            }
            ModelKind::PointRing => {
                let mass = p.ring_mass.unwrap_or(1.0);
                if !(0.0..=1.0).contains(&mass) {
                    return Err(Error::invalid("ring_mass must lie in [0, 1]"));
                }
                let radius = p.radius.unwrap_or(1.0);
                if !(radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::invalid("radius must be nonnegative"));
                }
                Law::PointRing { ring_mass: mass, radius }
            }
            ModelKind::PointMass => {
                let loc = p.location.clone().unwrap_or_else(|| vec![0.0; d]);
                check_len(&loc, d, "location")?;
                Law::PointMass { location: loc }
            }
            ModelKind::ProductNoise => {
                let levels = p.levels.clone().unwrap_or_else(|| DEFAULT_NOISE_LEVELS.to_vec());
                if levels.is_empty() || levels.iter().any(|l| !l.is_finite()) {
                    return Err(Error::invalid("levels must be a nonempty list of finite values"));
                }
                Law::ProductNoise { levels }
            }
        };
        Ok(Sampler { d, law })
    }

    /// Shorthand for `self.sampler()?.sample(n, rng)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        self.sampler()?.sample(n, rng)
    }
}

fn check_len(v: &[f64], d: usize, what: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct GaussianLaw {
    mean: Vec<f64>,
    /// Lower-triangular factor; `None` means identity covariance.
    factor: Option<Array2<f64>>,
}

impl GaussianLaw {
    fn new(d: usize, mean: Option<&[f64]>, cov: Option<&[Vec<f64>]>) -> Result<Self> {
        let mean = mean.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d]);
        check_len(&mean, d, "mean")?;
        let factor = match cov {
            None => None,
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid(format!("covariance must be {d} x {d}")));
                }
                let c = Array2::from_shape_fn((d, d), |(i, j)| rows[i][j]);
                Some(psd_cholesky(&c)?)
            }
        };
        Ok(Self { mean, factor })
    }

    fn draw_into<R: Rng + ?Sized>(&self, row: &mut [f64], z: &mut [f64], rng: &mut R) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        match &self.factor {
            None => {
                for ((r, m), zi) in row.iter_mut().zip(&self.mean).zip(z.iter()) {
                    *r = m + zi;
                }
            }
            Some(l) => {
                for (i, r) in row.iter_mut().enumerate() {
                    let li = l.row(i);
                    let mut acc = self.mean[i];
                    for k in 0..=i {
                        acc += li[k] * z[k];
                    }
                    *r = acc;
                }
            }
        }
    }
}

/// Cholesky factor of a symmetric positive semidefinite matrix. Zero pivots
/// (rank deficiency) produce zero columns; a clearly negative pivot is an
/// error.
pub fn psd_cholesky(c: &Array2<f64>) -> Result<Array2<f64>> {
    let d = c.nrows();
    if c.ncols() != d {
        return Err(Error::invalid("covariance must be square"));
    }
    let scale = (0..d).map(|i| c[[i, i]].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for i in 0..d {
        for j in 0..i {
            if (c[[i, j]] - c[[j, i]]).abs() > 1e-10 * scale {
                return Err(Error::invalid("covariance is not symmetric"));
            }
        }
    }
    let pivot_tol = 1e-10 * scale;
    let mut l = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let s = c[[j, j]] - (0..j).map(|k| l[[j, k]] * l[[j, k]]).sum::<f64>();
        if s < -1e-8 * scale {
            return Err(Error::invalid("covariance is not positive semidefinite"));
        }
        if s <= pivot_tol {
            for i in j + 1..d {
                let r = c[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
                if r.abs() > 1e-6 * scale {
                    return Err(Error::invalid("covariance is not positive semidefinite"));
                }
            }
            continue;
        }
        let pivot = s.sqrt();
        l[[j, j]] = pivot;
        for i in j + 1..d {
            let r = c[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
            l[[i, j]] = r / pivot;
        }
    }
    Ok(l)
}

#[derive(Debug, Clone)]
enum Law {
    Gaussian(GaussianLaw),
    Mixture { cumulative: Vec<f64>, laws: Vec<GaussianLaw> },
    UniformCube { half_width: f64 },
    Fragmented { k_star: usize },
    PointRing { ring_mass: f64, radius: f64 },
    PointMass { location: Vec<f64> },
    ProductNoise { levels: Vec<f64> },
}

/// A validated model ready to draw samples.
#[derive(Debug, Clone)]
pub struct Sampler {
    d: usize,
    law: Law,
}

impl Sampler {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// `n` i.i.d. rows.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::invalid("sample size must be >= 1"));
        }
        let mut data = vec![0.0; n * self.d];
        let mut scratch = vec![0.0; self.d];
        for row in data.chunks_exact_mut(self.d) {
            self.draw_into(row, &mut scratch, rng);
        }
        let points = Array2::from_shape_vec((n, self.d), data).expect("shape matches");
        PointCloud::new(points)
    }

    fn draw_into<R: Rng + ?Sized>(&self, row: &mut [f64], scratch: &mut [f64], rng: &mut R) {
        match &self.law {
            Law::Gaussian(g) => g.draw_into(row, scratch, rng),
            Law::Mixture { cumulative, laws } => {
                let u: f64 = rng.random();
                let k = cumulative.iter().position(|&c| u < c).unwrap_or(laws.len() - 1);
                laws[k].draw_into(row, scratch, rng);
            }
            Law::UniformCube { half_width } => {
                for r in row.iter_mut() {
                    *r = rng.random_range(-*half_width..*half_width);
                }
            }
            Law::Fragmented { k_star } => {
                for r in row.iter_mut() {
                    *r = rng.random_range(-1.0..1.0);
                }
                fragment_shift(row, *k_star);
            }
            Law::PointRing { ring_mass, radius } => {
                let on_ring = rng.random::<f64>() < *ring_mass;
                if on_ring {
                    loop {
                        for r in row.iter_mut() {
                            *r = rng.sample(StandardNormal);
                        }
                        let norm = crate::geometry::norm(row);
                        if norm > 0.0 {
                            row.iter_mut().for_each(|r| *r *= radius / norm);
                            break;
                        }
                    }
                } else {
                    row.fill(0.0);
                }
            }
            Law::PointMass { location } => row.copy_from_slice(location),
            Law::ProductNoise { levels } => {
                for r in row.iter_mut() {
                    *r = levels[rng.random_range(0..levels.len())];
                }
            }
        }
    }
}

/// `x -> x + Σ_{i<k*} sign(x_i) e_i` in place.
pub fn fragment_shift(x: &mut [f64], k_star: usize) {
    for v in x.iter_mut().take(k_star) {
        if *v > 0.0 {
            *v += 1.0;
        } else if *v < 0.0 {
            *v -= 1.0;
        }
    }
}

/// Independent samples of `Unif([-1,1]^d)` and of its fragmented pushforward.
pub fn fragmented_hypercube<R: Rng + ?Sized>(
    d: usize,
    k_star: usize,
    n: usize,
    rng: &mut R,
) -> Result<(PointCloud, PointCloud)> {
    if d < 1 || k_star < 1 || k_star > d {
        return Err(Error::invalid(format!("need 1 <= k_star <= d, got k_star = {k_star}, d = {d}")));
    }
    let source = ModelSpec::new(ModelKind::UniformCube, d).sample(n, rng)?;
    let mut spec = ModelSpec::new(ModelKind::FragmentedHypercube, d);
    spec.parameters.k_star = Some(k_star);
    let target = spec.sample(n, rng)?;
    Ok((source, target))
}

/// A sample where a known subset of rows is noise.
#[derive(Debug, Clone)]
pub struct ContaminatedSample {
    pub points: PointCloud,
    pub clean_mask: Vec<bool>,
}

impl ContaminatedSample {
    pub fn clean_count(&self) -> usize {
        self.clean_mask.iter().filter(|c| **c).count()
    }

    /// The rows flagged clean.
    pub fn clean_points(&self) -> Result<PointCloud> {
        let rows: Vec<usize> = (0..self.clean_mask.len()).filter(|&i| self.clean_mask[i]).collect();
        if rows.is_empty() {
            return Err(Error::invalid("no clean rows"));
        }
        self.points.select(&rows)
    }
}

/// Draws `ceil((1-ε)n)` rows from `clean`, the rest from `noise`, then
/// shuffles rows with a permutation drawn from `rng`.
pub fn contaminate<R: Rng + ?Sized>(
    clean: &Sampler,
    noise: &Sampler,
    epsilon: f64,
    n: usize,
    rng: &mut R,
) -> Result<ContaminatedSample> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::invalid(format!("contamination fraction must lie in [0, 1/2), got {epsilon}")));
    }
    if clean.dim() != noise.dim() {
        return Err(Error::DimensionMismatch { expected: clean.dim(), found: noise.dim() });
    }
    let n_noise = (epsilon * n as f64 + 1e-9).floor() as usize;
    let n_clean = n - n_noise;
    if n_clean == 0 {
        return Err(Error::invalid("sample size too small for any clean rows"));
    }
    let good = clean.sample(n_clean, rng)?;
    let d = clean.dim();
    let mut rows: Vec<(bool, usize)> = (0..n_clean).map(|i| (true, i)).collect();
    let bad = if n_noise > 0 { Some(noise.sample(n_noise, rng)?) } else { None };
    rows.extend((0..n_noise).map(|i| (false, i)));
    rows.shuffle(rng);
    let mut points = Array2::<f64>::zeros((n, d));
    let mut mask = Vec::with_capacity(n);
    for (dst, &(is_clean, src)) in rows.iter().enumerate() {
        let from = if is_clean { good.row(src) } else { bad.as_ref().expect("noise rows drawn").row(src) };
        points.row_mut(dst).assign(&from);
        mask.push(is_clean);
    }
    Ok(ContaminatedSample { points: PointCloud::new(points)?, clean_mask: mask })
}

/// The model pairs of the projection/sample-complexity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchmarkModel {
    /// `N(0, I)` vs `0.5 N(0, I) + 0.5 N(0, I + 0.5·11ᵀ/d)`.
    #[serde(rename = "1")]
    One,
    /// `N(0, I)` vs `N(2·1, I)`.
    #[serde(rename = "2")]
    Two,
    /// Ten-component Gaussian mixtures with random (frozen) parameters.
    #[serde(rename = "3")]
    Three,
}

impl BenchmarkModel {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            _ => Err(Error::invalid(format!("unknown model {id}; expected 1, 2 or 3"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
        }
    }

    /// `(μ, ν)` in dimension `d`. Model 3 draws its parameters from `seed`.
    pub fn pair(self, d: usize, seed: u64) -> Result<(ModelSpec, ModelSpec)> {
        if d == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        Ok(match self {
            Self::One => {
                let spiked: Vec<Vec<f64>> = (0..d)
                    .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 } + 0.5 / d as f64).collect())
                    .collect();
                let mut nu = ModelSpec::new(ModelKind::GaussianMixture, d);
                nu.parameters.components = Some(vec![
                    MixtureComponent { weight: 0.5, mean: None, covariance: None },
                    MixtureComponent { weight: 0.5, mean: None, covariance: Some(spiked) },
                ]);
                (ModelSpec::standard_gaussian(d), nu)
            }
            Self::Two => (ModelSpec::standard_gaussian(d), ModelSpec::gaussian(vec![2.0; d], None)),
            Self::Three => {
                let mut r = rng::root(rng::derive_seed(seed, &[3, d as u64]));
                let mu = random_mixture(d, 1.0, &mut r);
                let nu = random_mixture(d, 3.0, &mut r);
                (mu, nu)
            }
        })
    }

    /// Closed-form `SW_2^2(μ, ν)` when one exists (Model 2: `‖Δm‖²/d = 4`).
    pub fn population_sw2_sq(self) -> Option<f64> {
        match self {
            Self::Two => Some(4.0),
            _ => None,
        }
    }
}

fn random_mixture<R: Rng + ?Sized>(d: usize, center: f64, rng: &mut R) -> ModelSpec {
    let components = (0..10)
        .map(|_| {
            let mean: Vec<f64> = (0..d).map(|_| center + rng.sample::<f64, _>(StandardNormal)).collect();
            let k = rng.random_range(1..=d);
            let x: Vec<Vec<f64>> =
                (0..k).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let cov: Vec<Vec<f64>> = (0..d)
                .map(|i| (0..d).map(|j| x.iter().map(|row| row[i] * row[j]).sum::<f64>() / k as f64).collect())
                .collect();
            MixtureComponent { weight: 0.1, mean: Some(mean), covariance: Some(cov) }
        })
        .collect();
    let mut spec = ModelSpec::new(ModelKind::GaussianMixture, d);
    spec.parameters.components = Some(components);
    spec
}
