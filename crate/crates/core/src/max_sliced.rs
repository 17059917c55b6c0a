//! Max-sliced distances: projected subgradient ascent over the unit ball,
//! LIPO on the sphere, and an exhaustive grid for `d <= 3`.
//!
//! Throughout, `ŵ_p(θ)` is `W_p` between the projections onto `θ`, and the
//! subgradient method works with `w̃_p^p(θ) = -ŵ_p(θ)^p`, which it minimises
//! over the unit ball. Since `ŵ_p(cθ) = c ŵ_p(θ)`, any iterate can be scored
//! on the sphere as `ŵ_p(θ) / ‖θ‖`.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{check_order, pow_abs, sorted_order};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, project_ball, project_into, sample_sphere, weighted_row_sum, Direction, PointCloud};
use crate::rng;
use crate::sliced::ProjectedPair;

/// Rejected LIPO proposals allowed per unit of budget.
pub const LIPO_PROPOSAL_FACTOR: usize = 50;

/// Pairs sampled when estimating the default step scale.
pub const STEP_SCALE_PAIRS: usize = 10_000;

/// `ŵ_p(θ)` for a unit direction.
pub fn projected_distance(x: &PointCloud, y: &PointCloud, theta: &Direction, p: f64) -> Result<f64> {
    check_order(p)?;
    x.check_dim(theta.dim())?;
    let mut pair = ProjectedPair::new(x, y)?;
    Ok(pair.wp_pow(theta.as_slice(), p).powf(1.0 / p))
}

/// `w̃_p^p(θ) = -ŵ_p(θ)^p` for any `θ` in the ball.
pub fn smoothed_objective(x: &PointCloud, y: &PointCloud, theta: &[f64], p: f64) -> Result<f64> {
    check_order(p)?;
    x.check_dim(theta.len())?;
    let mut pair = ProjectedPair::new(x, y)?;
    Ok(-pair.wp_pow(theta, p))
}

/// One element of the subdifferential of `w̃_p^p` at `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgradient {
    pub xi: Vec<f64>,
    /// `pairing[i]` is the row of `Y` matched with row `i` of `X`.
    pub pairing: Vec<usize>,
    /// `w̃_p^p(θ)`.
    pub objective: f64,
}

fn check_uniform_pair(x: &PointCloud, y: &PointCloud) -> Result<()> {
    y.check_dim(x.dim())?;
    if !x.is_uniform() || !y.is_uniform() {
        return Err(Error::invalid("the subgradient method needs uniformly weighted clouds"));
    }
    if x.n() != y.n() {
        return Err(Error::LengthMismatch { left: x.n(), right: y.n() });
    }
    Ok(())
}

/// Reusable buffers for repeated subgradient evaluations on one pair.
struct SubgradientWorkspace<'a> {
    x: &'a PointCloud,
    y: &'a PointCloud,
    px: Vec<f64>,
    py: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    pairing: Vec<usize>,
}

impl<'a> SubgradientWorkspace<'a> {
    fn new(x: &'a PointCloud, y: &'a PointCloud) -> Self {
        let n = x.n();
        Self { x, y, px: Vec::new(), py: Vec::new(), a: vec![0.0; n], b: vec![0.0; n], pairing: vec![0; n] }
    }

    /// Returns `(ξ, w̃_p^p(θ))`; the pairing is left in `self.pairing`.
    fn eval(&mut self, theta: &[f64], p: f64) -> (Vec<f64>, f64) {
        let n = self.x.n();
        project_into(self.x, theta, &mut self.px);
        project_into(self.y, theta, &mut self.py);
        let ox = sorted_order(&self.px);
        let oy = sorted_order(&self.py);
        let mut total = 0.0;
        for (&i, &j) in ox.iter().zip(&oy) {
            self.pairing[i] = j;
            let r = self.px[i] - self.py[j];
            total += pow_abs(r, p);
            let g = if r == 0.0 || p == 2.0 { r } else { r.signum() * r.abs().powf(p - 1.0) };
            self.a[i] = g;
            self.b[j] = g;
        }
        let sx = weighted_row_sum(self.x, &self.a);
        let sy = weighted_row_sum(self.y, &self.b);
        let scale = -p / n as f64;
        let xi = sx.iter().zip(sy.iter()).map(|(u, v)| scale * (u - v)).collect();
        (xi, -total / n as f64)
    }
}

/// `ξ = -(p/n) Σ_i |θᵀΔ_i|^{p-1} sign(θᵀΔ_i) Δ_i` with `Δ_i = X_i - Y_σ(i)`
/// and `σ` the rank matching of the projections (stable sort on ties).
pub fn subgradient(x: &PointCloud, y: &PointCloud, theta: &[f64], p: f64) -> Result<Subgradient> {
    check_order(p)?;
    check_uniform_pair(x, y)?;
    x.check_dim(theta.len())?;
    if norm(theta) > 1.0 + 1e-12 {
        return Err(Error::invalid("theta must lie in the unit ball"));
    }
    let mut ws = SubgradientWorkspace::new(x, y);
    let (xi, objective) = ws.eval(theta, p);
    Ok(Subgradient { xi, pairing: ws.pairing, objective })
}

/// Starting point of the subgradient method.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// `(mean(X) - mean(Y)) / ‖·‖`, falling back to a random direction when
    /// the means coincide.
    #[default]
    MeanGap,
    Random,
    Given(Direction),
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Init::MeanGap => f.write_str("mean-gap"),
            Init::Random => f.write_str("random"),
            Init::Given(d) => {
                let parts: Vec<String> = d.as_slice().iter().map(|v| v.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for Init {
    type Err = Error;

    /// `mean-gap`, `random`, or comma-separated coordinates.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean-gap" => Ok(Init::MeanGap),
            "random" => Ok(Init::Random),
            other => {
                let coords = other
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::invalid(format!("bad init {other:?}: expected mean-gap, random or coordinates")))?;
                Ok(Init::Given(Direction::new(coords)?))
            }
        }
    }
}

impl Serialize for Init {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Init {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgradConfig {
    /// Number of steps `T`; the trace holds `T + 1` iterates.
    pub iterations: usize,
    /// `c` in `α_t = c / √(t+1)`; `None` picks [`default_step_scale`].
    pub step_scale: Option<f64>,
    pub init: Init,
    pub seed: u64,
}

impl SubgradConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self { iterations, step_scale: None, init: Init::MeanGap, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub theta: Vec<f64>,
    /// `w̃_p^p(θ_t)`.
    pub objective: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub iterates: Vec<Iterate>,
    /// `t*`, drawn with probability `α_t / Σ α`.
    pub sampled_index: usize,
    pub returned_sampled: Vec<f64>,
    pub value_at_sampled: f64,
    pub best_index: usize,
    pub returned_best: Direction,
    /// `ŵ_p` at the best iterate rescaled to the sphere.
    pub value_at_best: f64,
    pub step_scale: f64,
    pub p: f64,
    /// Set when `p != 2`, where no convergence guarantee is claimed.
    pub heuristic: bool,
}

impl OptimizerTrace {
    /// Writes `t,objective,step,norm` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,objective,step,norm")?;
        for (t, it) in self.iterates.iter().enumerate() {
            writeln!(out, "{t},{},{},{}", it.objective, it.step, norm(&it.theta))?;
        }
        Ok(())
    }
}

/// `1 / ρ̂` with `ρ̂ = 2 max ‖X_i - Y_j‖²` over all pairs, or over
/// [`STEP_SCALE_PAIRS`] random pairs when there are more.
pub fn default_step_scale(x: &PointCloud, y: &PointCloud, seed: u64) -> f64 {
    let (nx, ny) = (x.n(), y.n());
    let sq = |i: usize, j: usize| {
        x.row(i).iter().zip(y.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let max_sq = if nx.saturating_mul(ny) <= STEP_SCALE_PAIRS {
        (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).map(|(i, j)| sq(i, j)).fold(0.0, f64::max)
    } else {
        let mut r = rng::root(rng::derive_seed(seed, &[0x57e9]));
        (0..STEP_SCALE_PAIRS)
            .map(|_| sq(r.random_range(0..nx), r.random_range(0..ny)))
            .fold(0.0, f64::max)
    };
    let rho = 2.0 * max_sq;
    if rho > 0.0 {
        1.0 / rho
    } else {
        1.0
    }
}

pub(crate) fn initial_point(init: &Init, x: &PointCloud, y: &PointCloud, seed: u64) -> Result<Vec<f64>> {
    let d = x.dim();
    let random = || sample_sphere(d, &mut rng::root(rng::derive_seed(seed, &[0x1417]))).map(Direction::into_inner);
    match init {
        Init::Given(dir) => {
            x.check_dim(dir.dim())?;
            Ok(dir.as_slice().to_vec())
        }
        Init::Random => random(),
        Init::MeanGap => {
            let gap: Vec<f64> = x.mean().iter().zip(y.mean()).map(|(a, b)| a - b).collect();
            let len = norm(&gap);
            if len > 0.0 {
                Ok(gap.iter().map(|g| g / len).collect())
            } else {
                random()
            }
        }
    }
}

/// Sphere score of a ball point: `ŵ_p(θ)/‖θ‖`, or 0 at the origin.
fn sphere_value(objective: f64, theta: &[f64], p: f64) -> f64 {
    let len = norm(theta);
    if len > 0.0 {
        (-objective).max(0.0).powf(1.0 / p) / len
    } else {
        0.0
    }
}

/// Projected subgradient method `θ_{t+1} = Proj_B(θ_t - α_t ξ_t)`.
///
/// Returns both the randomly sampled iterate and the best iterate by sphere
/// value; `value_at_best` is a valid lower bound on the max-sliced distance.
pub fn subgrad_descent(x: &PointCloud, y: &PointCloud, p: f64, cfg: &SubgradConfig) -> Result<OptimizerTrace> {
    check_order(p)?;
    check_uniform_pair(x, y)?;
    if cfg.iterations < 1 {
        return Err(Error::invalid("iteration count T must be >= 1"));
    }
    let c = match cfg.step_scale {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(Error::invalid(format!("step scale must be positive, got {c}"))),
        None => default_step_scale(x, y, cfg.seed),
    };
    let mut theta = project_ball(&initial_point(&cfg.init, x, y, cfg.seed)?);
    let mut ws = SubgradientWorkspace::new(x, y);
    let mut iterates = Vec::with_capacity(cfg.iterations + 1);
    let (mut best_index, mut best_value) = (0, f64::NEG_INFINITY);
    for t in 0..=cfg.iterations {
        let step = c / ((t + 1) as f64).sqrt();
        let (xi, objective) = ws.eval(&theta, p);
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("non-finite objective at iteration {t}")));
        }
        let value = sphere_value(objective, &theta, p);
        if value > best_value {
            best_value = value;
            best_index = t;
        }
        let next = if t < cfg.iterations {
            let moved: Vec<f64> = theta.iter().zip(&xi).map(|(th, g)| th - step * g).collect();
            Some(project_ball(&moved))
        } else {
            None
        };
        iterates.push(Iterate { theta: std::mem::take(&mut theta), objective, step });
        match next {
            Some(n) => theta = n,
            None => break,
        }
    }
    let total: f64 = iterates.iter().map(|it| it.step).sum();
    let mut u = rng::root(rng::derive_seed(cfg.seed, &[0x7a5]))
        .random::<f64>()
        * total;
    let mut sampled_index = iterates.len() - 1;
    for (t, it) in iterates.iter().enumerate() {
        if u < it.step {
            sampled_index = t;
            break;
        }
        u -= it.step;
    }
    let sampled = &iterates[sampled_index];
    let value_at_sampled = sphere_value(sampled.objective, &sampled.theta, p);
    let best_theta = &iterates[best_index].theta;
    let returned_best = if norm(best_theta) > 0.0 {
        Direction::new(best_theta.clone())?
    } else {
        Direction::new(initial_point(&Init::Random, x, y, cfg.seed)?)?
    };
    let value_at_best = best_value.max(0.0);
    Ok(OptimizerTrace {
        returned_sampled: sampled.theta.clone(),
        value_at_sampled,
        sampled_index,
        iterates,
        best_index,
        returned_best,
        value_at_best,
        step_scale: c,
        p,
        heuristic: p != 2.0,
    })
}

/// Runs the configured start plus `restarts` random starts (seeded from
/// `cfg.seed`) in parallel and keeps the trace with the largest best value
/// (earliest on ties).
pub fn subgrad_multistart(
    x: &PointCloud,
    y: &PointCloud,
    p: f64,
    cfg: &SubgradConfig,
    restarts: usize,
) -> Result<OptimizerTrace> {
    let traces: Vec<OptimizerTrace> = (0..=restarts)
        .into_par_iter()
        .map(|r| {
            if r == 0 {
                subgrad_descent(x, y, p, cfg)
            } else {
                let cfg = SubgradConfig {
                    init: Init::Random,
                    seed: rng::derive_seed(cfg.seed, &[0x2e57, r as u64]),
                    ..cfg.clone()
                };
                subgrad_descent(x, y, p, &cfg)
            }
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, t) in traces.iter().enumerate() {
        if t.value_at_best > traces[best].value_at_best {
            best = i;
        }
    }
    Ok(traces.into_iter().nth(best).expect("at least one run"))
}

fn moment_root(cloud: &PointCloud, p: f64) -> f64 {
    let m: f64 = (0..cloud.n())
        .map(|i| cloud.weight(i) * norm(cloud.row(i).as_slice().expect("rows are contiguous")).powf(p))
        .sum();
    m.powf(1.0 / p)
}

/// `(Σ w_i ‖X_i‖^p)^{1/p} + (Σ w_j ‖Y_j‖^p)^{1/p}`, an upper bound on the
/// Lipschitz constant of `ŵ_p` on the sphere.
pub fn lipschitz_upper_bound(x: &PointCloud, y: &PointCloud, p: f64) -> f64 {
    moment_root(x, p) + moment_root(y, p)
}

/// The LIPO acceptance rule: `min_i {v_i + L d_i} >= max_i v_i`, where `d_i`
/// is the candidate's distance to evaluated point `i`.
pub fn lipo_accepts(values: &[f64], distances: &[f64], l_hat: f64) -> bool {
    if values.is_empty() {
        return true;
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().zip(distances).all(|(v, d)| v + l_hat * d >= best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipoState {
    pub evaluated: Vec<(Direction, f64)>,
    pub l_hat: f64,
    pub budget: usize,
    pub proposals_tried: usize,
}

impl LipoState {
    /// Best value after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.evaluated
            .iter()
            .map(|(_, v)| {
                best = best.max(*v);
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipoResult {
    pub theta: Direction,
    pub value: f64,
    pub state: LipoState,
}

/// LIPO over the sphere with uniform proposals. Stops after `budget`
/// evaluations or `LIPO_PROPOSAL_FACTOR * budget` rejections.
pub fn lipo_maximize(x: &PointCloud, y: &PointCloud, p: f64, budget: usize, seed: u64) -> Result<LipoResult> {
    check_order(p)?;
    if budget < 1 {
        return Err(Error::invalid("LIPO budget must be >= 1"));
    }
    let mut pair = ProjectedPair::new(x, y)?;
    let d = x.dim();
    let l_hat = lipschitz_upper_bound(x, y, p);
    let mut r = rng::root(seed);
    let mut evaluated: Vec<(Direction, f64)> = Vec::with_capacity(budget);
    let mut best = f64::NEG_INFINITY;
    let (mut proposals, mut rejected) = (0, 0);
    while evaluated.len() < budget && rejected < LIPO_PROPOSAL_FACTOR * budget {
        let cand = sample_sphere(d, &mut r)?;
        proposals += 1;
        // Same test as `lipo_accepts`, stopping at the first bound below the best value.
        let accept = evaluated.iter().all(|(theta, v)| {
            let gap: f64 = theta.as_slice().iter().zip(cand.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            v + l_hat * gap.sqrt() >= best
        });
        if !accept {
            rejected += 1;
            continue;
        }
        let v = pair.wp_pow(cand.as_slice(), p).powf(1.0 / p);
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite LIPO evaluation".into()));
        }
        best = best.max(v);
        evaluated.push((cand, v));
    }
    let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
    for (i, (_, v)) in evaluated.iter().enumerate() {
        if *v > bv {
            bi = i;
            bv = *v;
        }
    }
    Ok(LipoResult {
        theta: evaluated[bi].0.clone(),
        value: bv,
        state: LipoState { evaluated, l_hat, budget, proposals_tried: proposals },
    })
}

/// Grid directions used by [`dense_grid_oracle`].
pub fn sphere_grid(d: usize, resolution: usize) -> Result<Vec<Vec<f64>>> {
    if resolution < 8 {
        return Err(Error::invalid("grid resolution must be >= 8"));
    }
    match d {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..resolution)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / resolution as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()),
        3 => {
            // Fibonacci lattice: near-uniform spacing with resolution² points.
            let count = resolution * resolution;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            Ok((0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect())
        }
        _ => Err(Error::invalid(format!("dense grid oracle supports d <= 3, got {d}"))),
    }
}

/// Exhaustive maximisation of `ŵ_p` over [`sphere_grid`]; the first grid
/// point attaining the maximum is returned.
pub fn dense_grid_oracle(x: &PointCloud, y: &PointCloud, p: f64, resolution: usize) -> Result<(Direction, f64)> {
    check_order(p)?;
    let pair = ProjectedPair::new(x, y)?;
    let grid = sphere_grid(x.dim(), resolution)?;
    let values: Vec<f64> = grid
        .par_iter()
        .map_init(|| pair.clone(), |pair, theta| pair.wp_pow(theta, p).powf(1.0 / p))
        .collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Ok((Direction::new(grid[best].clone())?, values[best]))
}

/// Cosine between two vectors (0 if either vanishes).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na > 0.0 && nb > 0.0 {
        dot(a, b) / (na * nb)
    } else {
        0.0
    }
}
