//! Reproducible experiment drivers: projection and sample complexity of the
//! sliced estimator, empirical rates, optimizer benchmarks and robustness.
//!
//! Every driver is a pure function of its config and seed. Runs are spread
//! over rayon with seed-derived substreams and aggregated in index order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::distributions::{contaminate, fragmented_hypercube, BenchmarkModel, ModelSpec};
use crate::empirical::{w2_pow_to_normal, NormalQuantileCells};
use crate::error::{Error, Result};
use crate::geometry::{norm, project_into, sample_sphere, PointCloud};
use crate::max_sliced::{dense_grid_oracle, lipo_maximize, subgrad_descent, SubgradConfig};
use crate::rng::{self, derive_seed};
use crate::robust::{
    merge_anchor, msw1_weighted_ascent, resilience_report, restricted_w1, spectral_filter, thin_off_anchor,
    AscentConfig, FilterConfig, FilterWeights,
};
use crate::sliced::estimate_swp;

/// Bootstrap resamples behind each band.
pub const BOOTSTRAP_RESAMPLES: usize = 20;
const BAND_LOW: f64 = 0.1;
const BAND_HIGH: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean of `values` with the 10% and 90% quantiles of `resamples` bootstrap
/// means. The band is widened if needed so it always brackets the mean.
pub fn bootstrap_band(values: &[f64], resamples: usize, seed: u64) -> Result<Band> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::invalid("bootstrap needs values and at least one resample"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut r = rng::root(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[r.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(Band {
        mean,
        low: quantile_sorted(&means, BAND_LOW).min(mean),
        high: quantile_sorted(&means, BAND_HIGH).max(mean),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `log y` on `log x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 3 {
        return Err(Error::invalid("slope fit needs at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("slope fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(SlopeFit { slope, intercept, r2 })
}

/// One curve: per grid point, the mean over runs with a bootstrap band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    pub experiment: String,
    /// Model or quantity label used in the file name.
    pub model: String,
    /// Dimension, or `None` for curves whose x-axis is the dimension.
    pub d: Option<usize>,
    pub x_label: String,
    pub x_values: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
}

impl CurveResult {
    /// Builds a curve from run-level values, `values[i][r]` for grid point
    /// `i` and run `r`.
    fn from_runs(
        experiment: &str,
        model: &str,
        d: Option<usize>,
        x_label: &str,
        x_values: Vec<f64>,
        values: &[Vec<f64>],
        seed: u64,
    ) -> Result<Self> {
        let mut curve = CurveResult {
            experiment: experiment.into(),
            model: model.into(),
            d,
            x_label: x_label.into(),
            x_values,
            mean_error: Vec::new(),
            band_low: Vec::new(),
            band_high: Vec::new(),
            runs: values.first().map_or(0, Vec::len),
            seed,
        };
        let tag = derive_seed(seed, &[0xb007, d.unwrap_or(0) as u64, label_hash(model)]);
        for (i, v) in values.iter().enumerate() {
            let band = bootstrap_band(v, BOOTSTRAP_RESAMPLES, derive_seed(tag, &[i as u64]))?;
            curve.mean_error.push(band.mean);
            curve.band_low.push(band.low);
            curve.band_high.push(band.high);
        }
        Ok(curve)
    }

    pub fn file_name(&self) -> String {
        let d = self.d.map_or_else(|| "all".to_string(), |d| d.to_string());
        format!("{}_{}_{}.csv", self.experiment, self.model, d)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,mean,band_low,band_high\n");
        for i in 0..self.x_values.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.x_values[i], self.mean_error[i], self.band_low[i], self.band_high[i]
            ));
        }
        out
    }

    /// Log-log slope of the mean curve.
    pub fn slope(&self) -> Result<SlopeFit> {
        fit_loglog_slope(&self.x_values, &self.mean_error)
    }
}

fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100000001b3))
}

/// Everything an experiment produces: curves plus a JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub experiment: String,
    pub curves: Vec<CurveResult>,
    pub summary: Value,
}

/// Options that do not change any computed number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record wall-clock times (makes outputs non-reproducible).
    pub timing: bool,
}

/// How the sliced estimate is compared in the complexity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Closed form when available, otherwise a high-budget run.
    #[default]
    Population,
    /// A high-`m` estimate on the same sample pair, isolating Monte Carlo
    /// error over directions.
    SameSample,
}

/// `(model, d, seed, n_ref, m_ref)`.
type ReferenceKey = (u8, usize, u64, usize, usize);

/// Caches high-budget population references per `(model, d, seed)`.
#[derive(Debug, Default)]
pub struct ReferenceCache {
    values: std::sync::Mutex<BTreeMap<ReferenceKey, f64>>,
}

impl ReferenceCache {
    /// `SW_2^2(μ, ν)`: the closed form for Model 2, otherwise an estimate with
    /// `n_ref` samples and `m_ref` directions.
    pub fn population(&self, model: BenchmarkModel, d: usize, seed: u64, n_ref: usize, m_ref: usize) -> Result<f64> {
        if let Some(v) = model.population_sw2_sq() {
            return Ok(v);
        }
        let key = (model.id(), d, seed, n_ref, m_ref);
        if let Some(v) = self.values.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let (mu, nu) = model.pair(d, seed)?;
        let base = derive_seed(seed, &[0x2ef, u64::from(model.id()), d as u64]);
        let x = mu.sample(n_ref, &mut rng::stream(base, 0))?;
        let y = nu.sample(n_ref, &mut rng::stream(base, 1))?;
        let v = estimate_swp(&x, &y, 2.0, m_ref, derive_seed(base, &[2]))?.value_pow;
        self.values.lock().expect("cache lock").insert(key, v);
        Ok(v)
    }
}

fn default_model() -> u8 {
    1
}

/// `|Ŵ_MC − SW_2^2|` against the number of directions `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McComplexityConfig {
    #[serde(default = "default_model")]
    pub model: u8,
    pub d_grid: Vec<usize>,
    pub n: usize,
    pub m_grid: Vec<usize>,
    pub runs: usize,
    pub reference: ReferenceMode,
    pub reference_n: usize,
    pub reference_m: usize,
    /// Directions of the same-sample reference.
    pub same_sample_m: usize,
}

impl Default for McComplexityConfig {
    fn default() -> Self {
        Self {
            model: 1,
            d_grid: vec![5, 10, 50, 100],
            n: 1000,
            m_grid: vec![10, 30, 100, 300, 1000],
            runs: 50,
            reference: ReferenceMode::Population,
            reference_n: 5000,
            reference_m: 2000,
            same_sample_m: 10_000,
        }
    }
}

fn check_grid(name: &str, grid: &[usize]) -> Result<()> {
    if grid.is_empty() || grid.contains(&0) {
        return Err(Error::invalid(format!("{name} must be a nonempty list of positive integers")));
    }
    Ok(())
}

fn check_runs(runs: usize) -> Result<()> {
    if runs < 2 {
        return Err(Error::invalid("runs must be >= 2"));
    }
    Ok(())
}

pub fn run_mc_complexity(cfg: &McComplexityConfig, seed: u64, cache: &ReferenceCache) -> Result<ExperimentOutput> {
    let model = BenchmarkModel::from_id(cfg.model)?;
    check_grid("d_grid", &cfg.d_grid)?;
    check_grid("m_grid", &cfg.m_grid)?;
    check_runs(cfg.runs)?;
    let mut curves = Vec::new();
    let mut slopes = BTreeMap::new();
    for &d in &cfg.d_grid {
        let population = match cfg.reference {
            ReferenceMode::Population => Some(cache.population(model, d, seed, cfg.reference_n, cfg.reference_m)?),
            ReferenceMode::SameSample => None,
        };
        let (mu, nu) = model.pair(d, seed)?;
        let (mu, nu) = (mu.sampler()?, nu.sampler()?);
        // errors[r][k] for run r and m_grid[k]
        let errors: Vec<Vec<f64>> = (0..cfg.runs)
            .into_par_iter()
            .map(|r| {
                let base = derive_seed(seed, &[0x3c, d as u64, r as u64]);
                let x = mu.sample(cfg.n, &mut rng::stream(base, 0))?;
                let y = nu.sample(cfg.n, &mut rng::stream(base, 1))?;
                let reference = match population {
                    Some(v) => v,
                    None => estimate_swp(&x, &y, 2.0, cfg.same_sample_m, derive_seed(base, &[u64::MAX]))?.value_pow,
                };
                cfg.m_grid
                    .iter()
                    .map(|&m| Ok((estimate_swp(&x, &y, 2.0, m, derive_seed(base, &[m as u64]))?.value_pow - reference).abs()))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let by_m: Vec<Vec<f64>> = (0..cfg.m_grid.len()).map(|k| errors.iter().map(|e| e[k]).collect()).collect();
        let curve = CurveResult::from_runs(
            "mc-complexity",
            &format!("model{}", cfg.model),
            Some(d),
            "m",
            cfg.m_grid.iter().map(|&m| m as f64).collect(),
            &by_m,
            seed,
        )?;
        if let Ok(fit) = curve.slope() {
            slopes.insert(d.to_string(), fit);
        }
        curves.push(curve);
    }
    Ok(ExperimentOutput {
        experiment: "mc-complexity".into(),
        curves,
        summary: json!({ "slope_vs_m": slopes }),
    })
}

/// `|Ŵ_MC − SW_2^2|` against the sample size `n` at fixed `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleComplexityConfig {
    pub model: u8,
    pub d_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub m: usize,
    pub runs: usize,
    pub reference_n: usize,
    pub reference_m: usize,
}

impl Default for SampleComplexityConfig {
    fn default() -> Self {
        Self {
            model: 1,
            d_grid: vec![5, 10, 50, 100],
            n_grid: vec![250, 500, 1000, 2000, 4000],
            m: 500,
            runs: 50,
            reference_n: 5000,
            reference_m: 2000,
        }
    }
}

pub fn run_sample_complexity(cfg: &SampleComplexityConfig, seed: u64, cache: &ReferenceCache) -> Result<ExperimentOutput> {
    let model = BenchmarkModel::from_id(cfg.model)?;
    check_grid("d_grid", &cfg.d_grid)?;
    check_grid("n_grid", &cfg.n_grid)?;
    check_runs(cfg.runs)?;
    if cfg.m == 0 {
        return Err(Error::invalid("m must be >= 1"));
    }
    let mut curves = Vec::new();
    let mut slopes = BTreeMap::new();
    for &d in &cfg.d_grid {
        let reference = cache.population(model, d, seed, cfg.reference_n, cfg.reference_m)?;
        let (mu, nu) = model.pair(d, seed)?;
        let (mu, nu) = (mu.sampler()?, nu.sampler()?);
        let errors: Vec<Vec<f64>> = (0..cfg.runs)
            .into_par_iter()
            .map(|r| {
                cfg.n_grid
                    .iter()
                    .map(|&n| {
                        let base = derive_seed(seed, &[0x5c, d as u64, r as u64, n as u64]);
                        let x = mu.sample(n, &mut rng::stream(base, 0))?;
                        let y = nu.sample(n, &mut rng::stream(base, 1))?;
                        Ok((estimate_swp(&x, &y, 2.0, cfg.m, derive_seed(base, &[2]))?.value_pow - reference).abs())
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let by_n: Vec<Vec<f64>> = (0..cfg.n_grid.len()).map(|k| errors.iter().map(|e| e[k]).collect()).collect();
        let curve = CurveResult::from_runs(
            "sample-complexity",
            &format!("model{}", cfg.model),
            Some(d),
            "n",
            cfg.n_grid.iter().map(|&n| n as f64).collect(),
            &by_n,
            seed,
        )?;
        if let Ok(fit) = curve.slope() {
            slopes.insert(d.to_string(), fit);
        }
        curves.push(curve);
    }
    Ok(ExperimentOutput {
        experiment: "sample-complexity".into(),
        curves,
        summary: json!({ "slope_vs_n": slopes }),
    })
}

/// How `SW_2^2(μ̂_n, μ)` is evaluated against the Gaussian population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RateMethod {
    /// Exact per-direction distance to the projected Gaussian.
    #[default]
    Gaussian,
    /// Slicing against an independent sample of size `reference_factor · n`.
    TwoSample,
}

/// `E[SW_2^2(μ̂_n, μ)]` against `n` for `μ = N(0, I_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesConfig {
    pub d_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub m: usize,
    pub runs: usize,
    pub method: RateMethod,
    pub reference_factor: usize,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            d_grid: vec![5, 50],
            n_grid: vec![250, 1000, 4000, 8000],
            m: 100,
            runs: 50,
            method: RateMethod::Gaussian,
            reference_factor: 20,
        }
    }
}

/// `(1/m) Σ_j W_2^2(θ_j♯μ̂_n, N(0,1))` with exact per-direction distances.
pub fn sw2_sq_to_standard_gaussian(x: &PointCloud, m: usize, seed: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m must be >= 1"));
    }
    let cells = NormalQuantileCells::new(x.n());
    let d = x.dim();
    let values: Vec<f64> = (0..m)
        .into_par_iter()
        .map_init(Vec::new, |buf, j| {
            let theta = sample_sphere(d, &mut rng::stream(seed, j as u64))?;
            project_into(x, theta.as_slice(), buf);
            buf.sort_unstable_by(f64::total_cmp);
            w2_pow_to_normal(buf, 0.0, 1.0, &cells)
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / m as f64)
}

pub fn run_empirical_rate(cfg: &RatesConfig, seed: u64) -> Result<ExperimentOutput> {
    check_grid("d_grid", &cfg.d_grid)?;
    check_grid("n_grid", &cfg.n_grid)?;
    check_runs(cfg.runs)?;
    let mut curves = Vec::new();
    let mut slopes = BTreeMap::new();
    for &d in &cfg.d_grid {
        let gaussian = ModelSpec::standard_gaussian(d).sampler()?;
        let values: Vec<Vec<f64>> = (0..cfg.runs)
            .into_par_iter()
            .map(|r| {
                cfg.n_grid
                    .iter()
                    .map(|&n| {
                        let base = derive_seed(seed, &[0x7a, d as u64, r as u64, n as u64]);
                        let x = gaussian.sample(n, &mut rng::stream(base, 0))?;
                        match cfg.method {
                            RateMethod::Gaussian => sw2_sq_to_standard_gaussian(&x, cfg.m, derive_seed(base, &[1])),
                            RateMethod::TwoSample => {
                                let big = gaussian.sample(n * cfg.reference_factor.max(1), &mut rng::stream(base, 2))?;
                                Ok(estimate_swp(&x, &big, 2.0, cfg.m, derive_seed(base, &[1]))?.value_pow)
                            }
                        }
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let by_n: Vec<Vec<f64>> = (0..cfg.n_grid.len()).map(|k| values.iter().map(|e| e[k]).collect()).collect();
        let curve = CurveResult::from_runs(
            "rates",
            "gaussian",
            Some(d),
            "n",
            cfg.n_grid.iter().map(|&n| n as f64).collect(),
            &by_n,
            seed,
        )?;
        if let Ok(fit) = curve.slope() {
            slopes.insert(d.to_string(), fit);
        }
        curves.push(curve);
    }
    Ok(ExperimentOutput { experiment: "rates".into(), curves, summary: json!({ "slope_vs_n": slopes }) })
}

/// Optimizer benchmark on the fragmented hypercube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MswBenchConfig {
    pub d_grid: Vec<usize>,
    pub n: usize,
    pub k_star: usize,
    /// Subgradient steps `T`.
    #[serde(rename = "T")]
    pub iterations: usize,
    pub step_scale: Option<f64>,
    pub budget: usize,
    pub runs: usize,
    pub grid_resolution_2d: usize,
    pub grid_resolution_3d: usize,
}

impl Default for MswBenchConfig {
    fn default() -> Self {
        Self {
            d_grid: vec![10, 20, 50],
            n: 500,
            k_star: 10,
            iterations: 500,
            step_scale: None,
            budget: 500,
            runs: 10,
            grid_resolution_2d: 10_000,
            grid_resolution_3d: 300,
        }
    }
}

/// Best-so-far sphere values along a subgradient trace.
fn envelope(trace: &crate::max_sliced::OptimizerTrace) -> Vec<f64> {
    let mut best = 0.0f64;
    trace
        .iterates
        .iter()
        .map(|it| {
            let len = norm(&it.theta);
            let v = if len > 0.0 { (-it.objective).max(0.0).powf(1.0 / trace.p) / len } else { 0.0 };
            best = best.max(v);
            best
        })
        .collect()
}

/// Relative gap `(best_known - v) / best_known`, or 0 when both vanish.
fn relative_gap(best_known: f64, v: f64) -> f64 {
    if best_known > 0.0 {
        ((best_known - v) / best_known).max(0.0)
    } else {
        0.0
    }
}

pub fn run_msw_bench(cfg: &MswBenchConfig, seed: u64, options: RunOptions) -> Result<ExperimentOutput> {
    check_grid("d_grid", &cfg.d_grid)?;
    check_runs(cfg.runs)?;
    if cfg.iterations == 0 || cfg.budget == 0 {
        return Err(Error::invalid("T and budget must be >= 1"));
    }
    let mut curves = Vec::new();
    let mut per_d = BTreeMap::new();
    for &d in &cfg.d_grid {
        let k_star = cfg.k_star.min(d);
        struct Run {
            sub_env: Vec<f64>,
            lipo_env: Vec<f64>,
            best_known: f64,
            grid: Option<f64>,
            sub_secs: f64,
            lipo_secs: f64,
        }
        let runs: Vec<Run> = (0..cfg.runs)
            .into_par_iter()
            .map(|r| {
                let base = derive_seed(seed, &[0x45, d as u64, r as u64]);
                let (x, y) = fragmented_hypercube(d, k_star, cfg.n, &mut rng::root(base))?;
                let sub_cfg = SubgradConfig {
                    step_scale: cfg.step_scale,
                    ..SubgradConfig::new(cfg.iterations, derive_seed(base, &[1]))
                };
                let t0 = Instant::now();
                let trace = subgrad_descent(&x, &y, 2.0, &sub_cfg)?;
                let sub_secs = t0.elapsed().as_secs_f64();
                let t0 = Instant::now();
                let lipo = lipo_maximize(&x, &y, 2.0, cfg.budget, derive_seed(base, &[2]))?;
                let lipo_secs = t0.elapsed().as_secs_f64();
                let grid = match d {
                    2 => Some(dense_grid_oracle(&x, &y, 2.0, cfg.grid_resolution_2d)?.1),
                    3 => Some(dense_grid_oracle(&x, &y, 2.0, cfg.grid_resolution_3d)?.1),
                    _ => None,
                };
                let sub_env = envelope(&trace);
                let lipo_env = lipo.state.best_so_far();
                let best_known = sub_env
                    .last()
                    .copied()
                    .unwrap_or(0.0)
                    .max(lipo.value)
                    .max(grid.unwrap_or(0.0));
                Ok(Run { sub_env, lipo_env, best_known, grid, sub_secs, lipo_secs })
            })
            .collect::<Result<_>>()?;
        let sub_gaps: Vec<Vec<f64>> = (0..=cfg.iterations)
            .map(|t| runs.iter().map(|run| relative_gap(run.best_known, run.sub_env[t])).collect())
            .collect();
        // LIPO may stop early on rejections; hold its last value.
        let lipo_gaps: Vec<Vec<f64>> = (0..cfg.budget)
            .map(|k| {
                runs.iter()
                    .map(|run| {
                        let v = run.lipo_env.get(k).or(run.lipo_env.last()).copied().unwrap_or(0.0);
                        relative_gap(run.best_known, v)
                    })
                    .collect()
            })
            .collect();
        curves.push(CurveResult::from_runs(
            "msw-bench",
            "subgrad",
            Some(d),
            "iteration",
            (0..=cfg.iterations).map(|t| t as f64).collect(),
            &sub_gaps,
            seed,
        )?);
        curves.push(CurveResult::from_runs(
            "msw-bench",
            "lipo",
            Some(d),
            "evaluations",
            (1..=cfg.budget).map(|k| k as f64).collect(),
            &lipo_gaps,
            seed,
        )?);
        let mean = |f: &dyn Fn(&Run) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
        let mut entry = json!({
            "subgrad_final_gap": mean(&|r| relative_gap(r.best_known, *r.sub_env.last().expect("nonempty"))),
            "lipo_final_gap": mean(&|r| relative_gap(r.best_known, *r.lipo_env.last().expect("nonempty"))),
            "best_known_mean": mean(&|r| r.best_known),
        });
        if runs.iter().all(|r| r.grid.is_some()) {
            entry["grid_mean"] = json!(mean(&|r| r.grid.expect("checked")));
        }
        if options.timing {
            entry["subgrad_seconds_mean"] = json!(mean(&|r| r.sub_secs));
            entry["lipo_seconds_mean"] = json!(mean(&|r| r.lipo_secs));
        }
        per_d.insert(d.to_string(), entry);
    }
    Ok(ExperimentOutput { experiment: "msw-bench".into(), curves, summary: json!({ "per_d": per_d }) })
}

/// Robustness experiment: contaminated Gaussian (left) and point-ring
/// (right) panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustConfig {
    pub d_grid: Vec<usize>,
    pub epsilon: f64,
    pub runs: usize,
    pub sigma2: f64,
    pub threshold_mult: f64,
    /// `n = n_factor · d / ε²`.
    pub n_factor: f64,
    pub ascent_iterations: usize,
    pub ascent_restarts: usize,
    /// Ring atoms kept per side for the restricted `W_1`.
    pub ring_atoms: usize,
    /// Coordinates of product noise are uniform on these levels.
    pub noise_levels: Vec<f64>,
    pub left: bool,
    pub right: bool,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            d_grid: vec![10, 20, 50],
            epsilon: 0.1,
            runs: 3,
            sigma2: 1.0,
            threshold_mult: crate::robust::DEFAULT_THRESHOLD_MULT,
            n_factor: 10.0,
            ascent_iterations: 100,
            ascent_restarts: 1,
            ring_atoms: 1000,
            noise_levels: crate::distributions::DEFAULT_NOISE_LEVELS.to_vec(),
            left: true,
            right: true,
        }
    }
}

/// One run of the left panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeftRun {
    pub d: usize,
    pub run: usize,
    pub mean_gap: f64,
    pub msw1_lower: f64,
    pub ratio: f64,
    pub unfiltered_mean_gap: f64,
    pub unfiltered_msw1_lower: f64,
    pub removed_mass: f64,
    pub top_eigenvalue: f64,
}

/// One run of the right panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightRun {
    pub d: usize,
    pub run: usize,
    pub msw1_lower: f64,
    pub restricted_w1: f64,
    pub removed_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustResult {
    pub left: Vec<LeftRun>,
    pub right: Vec<RightRun>,
    pub output: ExperimentOutput,
}

fn sample_size(cfg: &RobustConfig, d: usize) -> usize {
    (cfg.n_factor * d as f64 / (cfg.epsilon * cfg.epsilon)).round().max(2.0) as usize
}

fn left_run(cfg: &RobustConfig, d: usize, r: usize, seed: u64) -> Result<LeftRun> {
    let base = derive_seed(seed, &[0x1ef7, d as u64, r as u64]);
    let n = sample_size(cfg, d);
    let clean = ModelSpec::standard_gaussian(d).sampler()?;
    let mut noise_spec = ModelSpec::product_noise(d);
    noise_spec.parameters.levels = Some(cfg.noise_levels.clone());
    let noise = noise_spec.sampler()?;
    let sample = contaminate(&clean, &noise, cfg.epsilon, n, &mut rng::stream(base, 0))?;
    let reference = sample.clean_points()?;
    let filter_cfg = FilterConfig { epsilon: cfg.epsilon, sigma2: cfg.sigma2, threshold_mult: cfg.threshold_mult };
    let weights = spectral_filter(&sample.points, &filter_cfg)?;
    let ascent = AscentConfig {
        restarts: cfg.ascent_restarts,
        ..AscentConfig::new(cfg.ascent_iterations, derive_seed(base, &[1]))
    };
    let filtered = resilience_report(&sample.points, &weights, &reference, &ascent)?;
    let uniform = FilterWeights { w: sample.points.weight_vec(), removed_mass: 0.0, iterations: 0, ..weights.clone() };
    let unfiltered = resilience_report(&sample.points, &uniform, &reference, &ascent)?;
    Ok(LeftRun {
        d,
        run: r,
        mean_gap: filtered.mean_gap,
        msw1_lower: filtered.msw1_lower,
        ratio: filtered.ratio,
        unfiltered_mean_gap: unfiltered.mean_gap,
        unfiltered_msw1_lower: unfiltered.msw1_lower,
        removed_mass: weights.removed_mass,
        top_eigenvalue: weights.top_eigenvalue,
    })
}

fn right_run(cfg: &RobustConfig, d: usize, r: usize, seed: u64) -> Result<RightRun> {
    let base = derive_seed(seed, &[0x7167, d as u64, r as u64]);
    let n = sample_size(cfg, d);
    let anchor = vec![0.0; d];
    let spec = ModelSpec::point_ring(d, cfg.epsilon, (d as f64 / cfg.epsilon).sqrt());
    // Rows at the origin are merged into one weighted atom; this is exact for
    // the filter and both distances and keeps the clouds small.
    let x = merge_anchor(&spec.sample(n, &mut rng::stream(base, 0))?, &anchor)?;
    let reference = merge_anchor(&spec.sample(n, &mut rng::stream(base, 1))?, &anchor)?;
    let filter_cfg = FilterConfig { epsilon: cfg.epsilon, sigma2: cfg.sigma2, threshold_mult: cfg.threshold_mult };
    let weights = spectral_filter(&x, &filter_cfg)?;
    let filtered = x.reweighted(weights.w.clone())?;
    let ascent = AscentConfig {
        restarts: cfg.ascent_restarts,
        ..AscentConfig::new(cfg.ascent_iterations, derive_seed(base, &[2]))
    };
    let msw = msw1_weighted_ascent(&filtered, &reference, &ascent)?;
    let gap: Vec<f64> = filtered.mean().iter().zip(reference.mean()).map(|(a, b)| a - b).collect();
    let msw1_lower = msw.value.max(norm(&gap));
    let xs = thin_off_anchor(&filtered, &anchor, cfg.ring_atoms, &mut rng::stream(base, 3))?;
    let ys = thin_off_anchor(&reference, &anchor, cfg.ring_atoms, &mut rng::stream(base, 4))?;
    let w1 = restricted_w1(&xs, &ys, &anchor)?;
    Ok(RightRun { d, run: r, msw1_lower, restricted_w1: w1, removed_mass: weights.removed_mass })
}

fn validate_robust(cfg: &RobustConfig) -> Result<()> {
    check_grid("d_grid", &cfg.d_grid)?;
    check_runs(cfg.runs)?;
    // The default ε = 0.1 sits above the filter's guarantee regime; the
    // filter reports that as a warning rather than refusing.
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 0.5) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1/2), got {}", cfg.epsilon)));
    }
    if cfg.ring_atoms == 0 || cfg.ring_atoms > crate::transport::MAX_TRANSPORT_ATOMS - 1 {
        return Err(Error::invalid("ring_atoms must lie in [1, 1999]"));
    }
    Ok(())
}

pub fn run_robust(cfg: &RobustConfig, seed: u64) -> Result<RobustResult> {
    validate_robust(cfg)?;
    let tasks: Vec<(usize, usize)> =
        cfg.d_grid.iter().flat_map(|&d| (0..cfg.runs).map(move |r| (d, r))).collect();
    // Large dimensions dominate the cost; run tasks one at a time so the
    // inner loops get the whole pool and memory stays bounded.
    let left: Vec<LeftRun> = if cfg.left {
        tasks.iter().map(|&(d, r)| left_run(cfg, d, r, seed)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let right: Vec<RightRun> = if cfg.right {
        tasks.iter().map(|&(d, r)| right_run(cfg, d, r, seed)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let ds: Vec<f64> = cfg.d_grid.iter().map(|&d| d as f64).collect();
    let grouped = |f: &dyn Fn(usize) -> Vec<f64>| -> Vec<Vec<f64>> { cfg.d_grid.iter().map(|&d| f(d)).collect() };
    let mut curves = Vec::new();
    let mut summary = serde_json::Map::new();
    if cfg.left {
        let pick = |g: fn(&LeftRun) -> f64| {
            grouped(&|d| left.iter().filter(|r| r.d == d).map(g).collect())
        };
        for (label, g) in [
            ("left-mean-gap", (|r: &LeftRun| r.mean_gap) as fn(&LeftRun) -> f64),
            ("left-msw1", |r: &LeftRun| r.msw1_lower),
            ("left-unfiltered-mean-gap", |r: &LeftRun| r.unfiltered_mean_gap),
            ("left-unfiltered-msw1", |r: &LeftRun| r.unfiltered_msw1_lower),
        ] {
            curves.push(CurveResult::from_runs("robust", label, None, "d", ds.clone(), &pick(g), seed)?);
        }
        let within = left.iter().filter(|r| r.ratio <= 16.0).count();
        summary.insert("left_runs".into(), serde_json::to_value(&left).expect("serializable"));
        summary.insert("left_ratio_within_16".into(), json!(within as f64 / left.len() as f64));
        summary.insert("left_gap_dominated".into(), json!(left.iter().all(|r| r.mean_gap <= r.msw1_lower)));
    }
    if cfg.right {
        let msw: Vec<Vec<f64>> = grouped(&|d| right.iter().filter(|r| r.d == d).map(|r| r.msw1_lower).collect());
        let w1: Vec<Vec<f64>> = grouped(&|d| right.iter().filter(|r| r.d == d).map(|r| r.restricted_w1).collect());
        let ratio: Vec<Vec<f64>> = grouped(&|d| {
            right.iter().filter(|r| r.d == d).map(|r| r.restricted_w1 / r.msw1_lower.max(1e-12)).collect()
        });
        curves.push(CurveResult::from_runs("robust", "right-msw1", None, "d", ds.clone(), &msw, seed)?);
        curves.push(CurveResult::from_runs("robust", "right-w1", None, "d", ds.clone(), &w1, seed)?);
        let ratio_curve = CurveResult::from_runs("robust", "right-ratio", None, "d", ds.clone(), &ratio, seed)?;
        if let Ok(fit) = ratio_curve.slope() {
            summary.insert("right_ratio_slope".into(), serde_json::to_value(fit).expect("serializable"));
        }
        curves.push(ratio_curve);
        summary.insert("right_runs".into(), serde_json::to_value(&right).expect("serializable"));
    }
    let output = ExperimentOutput { experiment: "robust".into(), curves, summary: Value::Object(summary) };
    Ok(RobustResult { left, right, output })
}

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: [&str; 5] = ["mc-complexity", "sample-complexity", "rates", "msw-bench", "robust"];

/// Top-level keys a config may use for experiment `name`.
pub fn config_keys(name: &str) -> Result<Vec<String>> {
    let value = match name {
        "mc-complexity" => serde_json::to_value(McComplexityConfig::default()),
        "sample-complexity" => serde_json::to_value(SampleComplexityConfig::default()),
        "rates" => serde_json::to_value(RatesConfig::default()),
        "msw-bench" => serde_json::to_value(MswBenchConfig::default()),
        "robust" => serde_json::to_value(RobustConfig::default()),
        other => return Err(Error::invalid(format!("unknown experiment {other:?}; expected one of {EXPERIMENTS:?}"))),
    }
    .expect("configs serialize");
    Ok(value.as_object().expect("configs are objects").keys().cloned().collect())
}

/// Parses a config document, reporting every unknown top-level key at once.
pub fn parse_config<T: DeserializeOwned>(name: &str, doc: &Value) -> Result<T> {
    let allowed = config_keys(name)?;
    let Some(obj) = doc.as_object() else {
        return Err(Error::invalid("experiment config must be a JSON object"));
    };
    let unknown: Vec<&String> = obj.keys().filter(|k| !allowed.contains(k)).collect();
    if !unknown.is_empty() {
        return Err(Error::invalid(format!(
            "unknown config keys for {name}: {}; allowed: {}",
            unknown.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", "),
            allowed.join(", ")
        )));
    }
    serde_json::from_value(doc.clone()).map_err(|e| Error::invalid(format!("bad {name} config: {e}")))
}

/// Runs experiment `name` with a JSON config (missing keys take defaults).
/// Returns the output together with the fully resolved config.
pub fn run_experiment(name: &str, doc: &Value, seed: u64, options: RunOptions) -> Result<(ExperimentOutput, Value)> {
    let cache = ReferenceCache::default();
    let resolved = |c: &dyn erased::ToValue| c.to_value();
    Ok(match name {
        "mc-complexity" => {
            let cfg: McComplexityConfig = parse_config(name, doc)?;
            (run_mc_complexity(&cfg, seed, &cache)?, resolved(&cfg))
        }
        "sample-complexity" => {
            let cfg: SampleComplexityConfig = parse_config(name, doc)?;
            (run_sample_complexity(&cfg, seed, &cache)?, resolved(&cfg))
        }
        "rates" => {
            let cfg: RatesConfig = parse_config(name, doc)?;
            (run_empirical_rate(&cfg, seed)?, resolved(&cfg))
        }
        "msw-bench" => {
            let cfg: MswBenchConfig = parse_config(name, doc)?;
            (run_msw_bench(&cfg, seed, options)?, resolved(&cfg))
        }
        "robust" => {
            let cfg: RobustConfig = parse_config(name, doc)?;
            (run_robust(&cfg, seed)?.output, resolved(&cfg))
        }
        other => return Err(Error::invalid(format!("unknown experiment {other:?}; expected one of {EXPERIMENTS:?}"))),
    })
}

mod erased {
    use serde::Serialize;
    use serde_json::Value;

    pub trait ToValue {
        fn to_value(&self) -> Value;
    }

    impl<T: Serialize> ToValue for T {
        fn to_value(&self) -> Value {
            serde_json::to_value(self).expect("configs serialize")
        }
    }
}

/// Git-style blob hash: `sha256("blob {len}\0" ++ bytes)`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Writes one CSV per curve and `manifest.json` into `dir`; returns the
/// manifest. Output bytes depend only on the inputs.
pub fn write_outputs(dir: &Path, output: &ExperimentOutput, config: &Value, seed: u64) -> Result<Value> {
    fs::create_dir_all(dir).map_err(|e| Error::invalid(format!("cannot create {}: {e}", dir.display())))?;
    let mut files = serde_json::Map::new();
    for curve in &output.curves {
        let text = curve.to_csv();
        let name = curve.file_name();
        fs::write(dir.join(&name), &text).map_err(|e| Error::invalid(format!("cannot write {name}: {e}")))?;
        files.insert(name, json!(content_hash(text.as_bytes())));
    }
    let input = json!({ "experiment": output.experiment, "config": config, "seed": seed });
    let input_bytes = serde_json::to_vec(&input).expect("serializable");
    let manifest = json!({
        "experiment": output.experiment,
        "seed": seed,
        "config": config,
        "input_hash": content_hash(&input_bytes),
        "files": files,
        "summary": output.summary,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    fs::write(dir.join("manifest.json"), text).map_err(|e| Error::invalid(format!("cannot write manifest: {e}")))?;
    Ok(manifest)
}
