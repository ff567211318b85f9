//! Exact samplers for the Brownian meander and the 3-d Bessel bridge, the
//! conditioned laws `nu_r = mu( . | g >= r)`, and Girsanov reweighting of
//! Brownian paths into the distorted law.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GsurfError, Result};
use crate::functional::CylindricalFunctional;
use crate::mc::{map_paths, MCEstimate, Moments, Stream};
use crate::path_engine::{extremum_with, ExtremumKind, PathSample, ProcessSpec, TimeGrid};
use crate::quadrature::extrapolation_weights;
use crate::rng;
use crate::surface_measure::default_refinement;

/// Acceptance rates below this make rejection conditioning infeasible.
pub const ACCEPTANCE_FLOOR: f64 = 1e-4;
/// Largest `|b / sigma|` accepted by the reweighting.
pub const MAX_TILT: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawTag {
    Meander,
    Bessel3Bridge,
    NuR(f64),
    Girsanov { b: f64, sigma: f64 },
}

/// A batch of paths from one conditioned law. Samplers that are not driven
/// by a single Brownian motion store the path increments in `driving`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedBatch {
    pub paths: Vec<PathSample>,
    pub law_tag: LawTag,
    pub acceptance_rate: f64,
}

fn bridges<const K: usize>(grid: TimeGrid, rng: &mut impl Rng) -> [Vec<f64>; K] {
    let n = grid.n();
    let sd = grid.dt().sqrt();
    std::array::from_fn(|_| {
        let mut w = vec![0.0; n + 1];
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            w[i + 1] = w[i] + z * sd;
        }
        let end = w[n];
        for (i, v) in w.iter_mut().enumerate() {
            *v -= grid.node(i) * end;
        }
        w[n] = 0.0;
        w
    })
}

fn from_values(grid: TimeGrid, values: Vec<f64>, seed_tag: u64) -> PathSample {
    let driving = values.windows(2).map(|w| w[1] - w[0]).collect();
    PathSample { grid, process: ProcessSpec::bm(), values, driving, seed_tag }
}

/// Brownian meander on `[0, 1]`: a Rayleigh endpoint `rho` and the norm of a
/// 3-d Brownian bridge from 0 to `(rho, 0, 0)`.
pub fn sample_meander(grid: TimeGrid, seed_tag: u64) -> PathSample {
    let mut r = rng::path_rng(seed_tag);
    let u: f64 = r.random();
    let rho = (-2.0 * (-u).ln_1p()).sqrt();
    let [b1, b2, b3] = bridges::<3>(grid, &mut r);
    let values = (0..=grid.n())
        .map(|i| {
            let x = b1[i] + grid.node(i) * rho;
            (x * x + b2[i] * b2[i] + b3[i] * b3[i]).sqrt()
        })
        .collect();
    from_values(grid, values, seed_tag)
}

/// 3-d Bessel bridge from 0 to 0: the norm of three independent Brownian
/// bridges.
pub fn sample_bessel3_bridge(grid: TimeGrid, seed_tag: u64) -> PathSample {
    let mut r = rng::path_rng(seed_tag);
    let [b1, b2, b3] = bridges::<3>(grid, &mut r);
    let values = (0..=grid.n())
        .map(|i| (b1[i] * b1[i] + b2[i] * b2[i] + b3[i] * b3[i]).sqrt())
        .collect();
    from_values(grid, values, seed_tag)
}

pub fn meander_batch(grid: TimeGrid, stream: Stream, n: usize) -> ConditionedBatch {
    let paths = (0..n).map(|i| sample_meander(grid, stream.path_tag(i))).collect();
    ConditionedBatch { paths, law_tag: LawTag::Meander, acceptance_rate: 1.0 }
}

pub fn bessel_batch(grid: TimeGrid, stream: Stream, n: usize) -> ConditionedBatch {
    let paths = (0..n).map(|i| sample_bessel3_bridge(grid, stream.path_tag(i))).collect();
    ConditionedBatch { paths, law_tag: LawTag::Bessel3Bridge, acceptance_rate: 1.0 }
}

/// Mean of `phi` under `nu_r` by rejection, with the acceptance rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionedEstimate {
    pub estimate: MCEstimate,
    pub acceptance_rate: f64,
    pub acceptance_se: f64,
    pub accepted: usize,
}

/// `E[phi | g >= r]` by rejection on `n_paths` draws.
pub fn conditioned_mean(
    phi: &CylindricalFunctional,
    process: &ProcessSpec,
    r: f64,
    n_paths: usize,
    grid: TimeGrid,
    stream: Stream,
) -> Result<ConditionedEstimate> {
    conditioned_means(std::slice::from_ref(phi), process, r, n_paths, grid, stream).map(|mut v| v.remove(0))
}

/// [`conditioned_mean`] for several functionals on one batch.
pub fn conditioned_means(
    phis: &[CylindricalFunctional],
    process: &ProcessSpec,
    r: f64,
    n_paths: usize,
    grid: TimeGrid,
    stream: Stream,
) -> Result<Vec<ConditionedEstimate>> {
    if !(r < 0.0) {
        return Err(GsurfError::Precondition(format!("conditioning level r = {r} must be < 0")));
    }
    let refine = default_refinement(process);
    let rows = map_paths(process, grid, stream, n_paths, |p| {
        let g = extremum_with(p, ExtremumKind::Min, refine)?.value;
        Ok((g >= r).then(|| phis.iter().map(|f| f.eval(&p.values)).collect::<Vec<f64>>()))
    })?;
    let accepted: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    let rate = accepted.len() as f64 / n_paths.max(1) as f64;
    if rate < ACCEPTANCE_FLOOR {
        return Err(GsurfError::InfeasibleConditioning { rate, floor: ACCEPTANCE_FLOOR });
    }
    let rate_se = (rate * (1.0 - rate) / n_paths as f64).sqrt();
    Ok((0..phis.len())
        .map(|k| {
            let mut m = Moments::default();
            for row in &accepted {
                m.push(row[k]);
            }
            ConditionedEstimate {
                estimate: m.estimate(stream.key()),
                acceptance_rate: rate,
                acceptance_se: rate_se,
                accepted: accepted.len(),
            }
        })
        .collect())
}

/// Rejection estimates of `E[phi | g >= r]` at several levels and their
/// least-squares linear extrapolation to `r = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedLimit {
    pub levels: Vec<f64>,
    pub means: Vec<MCEstimate>,
    pub acceptance_rates: Vec<f64>,
    /// Extrapolated value; its se combines the per-path influence terms of
    /// all levels, which share one batch.
    pub limit: MCEstimate,
}

/// [`ConditionedLimit`] for each functional from one batch of `n_paths`.
pub fn conditioned_limit(
    phis: &[CylindricalFunctional],
    process: &ProcessSpec,
    levels: &[f64],
    n_paths: usize,
    grid: TimeGrid,
    stream: Stream,
) -> Result<Vec<ConditionedLimit>> {
    if levels.len() < 2 || levels.iter().any(|r| !(*r < 0.0)) {
        return Err(GsurfError::Precondition("need at least two levels, all < 0".into()));
    }
    let lo = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let refine = default_refinement(process);
    let rows = map_paths(process, grid, stream, n_paths, |p| {
        let g = extremum_with(p, ExtremumKind::Min, refine)?.value;
        Ok((g >= lo).then(|| (g, phis.iter().map(|f| f.eval(&p.values)).collect::<Vec<f64>>())))
    })?;
    let accepted: Vec<&(f64, Vec<f64>)> = rows.iter().flatten().collect();
    let nf = n_paths as f64;
    let rates: Vec<f64> = levels.iter().map(|r| accepted.iter().filter(|(g, _)| g >= r).count() as f64 / nf).collect();
    if let Some(&rate) = rates.iter().find(|p| **p < ACCEPTANCE_FLOOR) {
        return Err(GsurfError::InfeasibleConditioning { rate, floor: ACCEPTANCE_FLOOR });
    }
    let (w, _) = extrapolation_weights(levels);
    let key = stream.key();
    Ok((0..phis.len())
        .map(|k| {
            let means: Vec<MCEstimate> = levels
                .iter()
                .map(|r| {
                    let mut m = Moments::default();
                    for (g, v) in &accepted {
                        if g >= r {
                            m.push(v[k]);
                        }
                    }
                    m.estimate(key)
                })
                .collect();
            // influence of path i: sum_j w_j (phi_i - R_j) 1{g_i >= r_j} / p_j
            let mut infl = Moments::default();
            for (g, v) in &accepted {
                let t: f64 = (0..levels.len())
                    .filter(|&j| *g >= levels[j])
                    .map(|j| w[j] * (v[k] - means[j].mean) / rates[j])
                    .sum();
                infl.push(t);
            }
            for _ in accepted.len()..n_paths {
                infl.push(0.0);
            }
            let value: f64 = w.iter().zip(&means).map(|(w, m)| w * m.mean).sum();
            ConditionedLimit {
                levels: levels.to_vec(),
                means,
                acceptance_rates: rates.clone(),
                limit: MCEstimate::new(value, infl.se(), n_paths, key),
            }
        })
        .collect())
}

/// Self-normalized ratio `sum phi w / sum w` with delta-method standard error.
pub fn weighted_mean(values: &[f64], weights: &[f64], seed: u64) -> MCEstimate {
    let n = values.len();
    let sw: f64 = weights.iter().sum();
    if n == 0 || !(sw > 0.0) {
        return MCEstimate::degenerate(n, seed);
    }
    let est = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / sw;
    let mean_w = sw / n as f64;
    let mut m = Moments::default();
    for (v, w) in values.iter().zip(weights) {
        m.push(w * (v - est));
    }
    // var of the ratio ~ E[w^2 (phi - est)^2] / (N E[w]^2)
    let second = m.var() + m.mean() * m.mean();
    MCEstimate::new(est, (second / n as f64).sqrt() / mean_w, n, seed)
}

/// Girsanov weight `exp(theta y1 - theta^2 / 2)` turning a Brownian path
/// ending at `y1` into a path of `theta t + B`.
pub fn girsanov_weight(theta: f64, y1: f64) -> f64 {
    (theta * y1 - 0.5 * theta * theta).exp()
}

/// `E[phi(X)]` for `X = b t + sigma B`, computed on Brownian paths `Y` with
/// `X = sigma Y` and self-normalized tilt weights.
pub fn girsanov_reweight(
    phi: &CylindricalFunctional,
    b: f64,
    sigma: f64,
    n_paths: usize,
    grid: TimeGrid,
    stream: Stream,
) -> Result<MCEstimate> {
    ProcessSpec::distorted(b, sigma)?;
    let theta = b / sigma;
    if theta.abs() > MAX_TILT {
        return Err(GsurfError::NumericRange(format!("tilt b/sigma = {theta} is too large to reweight")));
    }
    let rows = map_paths(&ProcessSpec::bm(), grid, stream, n_paths, |p| {
        let w = girsanov_weight(theta, p.values[grid.n()]);
        if !w.is_finite() {
            return Err(GsurfError::NumericRange("Girsanov weight overflow".into()));
        }
        let x: Vec<f64> = p.values.iter().map(|y| sigma * y).collect();
        Ok((phi.eval(&x), w))
    })?;
    let (v, w): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    Ok(weighted_mean(&v, &w, stream.key()))
}
