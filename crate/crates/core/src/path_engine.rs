//! Simulation of the five Gaussian-driven processes on a uniform grid over
//! `[0, 1]`, extremum extraction, and perturbation helpers for gradient
//! checks.
//!
//! Every path is a deterministic function of its driving increments, which in
//! turn are a deterministic function of the path's seed tag.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GsurfError, Result};
use crate::rng;
use crate::spectral_ops::CameronMartinVector;

/// Absolute tolerance used when counting tied extremal nodes.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Grid exponent above which a cell cannot beat the current refined extremum:
/// `exp(-37) < 2^-53`, the smallest keyed uniform.
const SKIP_EXPONENT: f64 = 37.0;

/// Uniform grid `t_i = i / n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    n: usize,
}

impl TimeGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(GsurfError::Grid(format!("need at least 2 steps, got {n}")));
        }
        Ok(Self { n })
    }

    /// Number of steps (cells).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.node(i)).collect()
    }

    /// Midpoint of cell `j`, i.e. of `[t_j, t_{j+1}]`.
    pub fn cell_mid(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.n as f64
    }

    /// Nearest node index to `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        let i = (t * self.n as f64).round();
        i.clamp(0.0, self.n as f64) as usize
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { n: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Bm,
    Distorted,
    Geometric,
    Bridge,
    Ou,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 5] = [
        ProcessKind::Bm,
        ProcessKind::Distorted,
        ProcessKind::Geometric,
        ProcessKind::Bridge,
        ProcessKind::Ou,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProcessKind::Bm => "bm",
            ProcessKind::Distorted => "distorted",
            ProcessKind::Geometric => "geometric",
            ProcessKind::Bridge => "bridge",
            ProcessKind::Ou => "ou",
        }
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcessKind {
    type Err = GsurfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bm" => Ok(ProcessKind::Bm),
            "distorted" => Ok(ProcessKind::Distorted),
            "geometric" => Ok(ProcessKind::Geometric),
            "bridge" => Ok(ProcessKind::Bridge),
            "ou" => Ok(ProcessKind::Ou),
            other => Err(GsurfError::Config(format!("unknown process '{other}'"))),
        }
    }
}

/// Which process to simulate, with its parameters. Fields that a kind does
/// not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    /// Drift (distorted, geometric).
    pub b: f64,
    /// Volatility (distorted, geometric).
    pub sigma: f64,
    /// Mean reversion (ou).
    pub a: f64,
}

impl ProcessSpec {
    pub fn bm() -> Self {
        Self { kind: ProcessKind::Bm, b: 0.0, sigma: 1.0, a: 0.0 }
    }

    pub fn bridge() -> Self {
        Self { kind: ProcessKind::Bridge, b: 0.0, sigma: 1.0, a: 0.0 }
    }

    pub fn distorted(b: f64, sigma: f64) -> Result<Self> {
        Self { kind: ProcessKind::Distorted, b, sigma, a: 0.0 }.validated()
    }

    pub fn geometric(b: f64, sigma: f64) -> Result<Self> {
        Self { kind: ProcessKind::Geometric, b, sigma, a: 0.0 }.validated()
    }

    pub fn ou(a: f64) -> Result<Self> {
        Self { kind: ProcessKind::Ou, b: 0.0, sigma: 1.0, a }.validated()
    }

    /// Builds a spec for `kind` from a full parameter set.
    pub fn from_parts(kind: ProcessKind, b: f64, sigma: f64, a: f64) -> Result<Self> {
        match kind {
            ProcessKind::Bm => Ok(Self::bm()),
            ProcessKind::Bridge => Ok(Self::bridge()),
            ProcessKind::Distorted => Self::distorted(b, sigma),
            ProcessKind::Geometric => Self::geometric(b, sigma),
            ProcessKind::Ou => Self::ou(a),
        }
    }

    pub fn validated(self) -> Result<Self> {
        match self.kind {
            ProcessKind::Distorted | ProcessKind::Geometric => {
                if !(self.sigma > 0.0 && self.sigma.is_finite()) {
                    return Err(GsurfError::Parameter(format!("sigma must be > 0, got {}", self.sigma)));
                }
                if !self.b.is_finite() {
                    return Err(GsurfError::Parameter("drift b must be finite".into()));
                }
            }
            ProcessKind::Ou => {
                if !(self.a > 0.0 && self.a.is_finite()) {
                    return Err(GsurfError::Parameter(format!("mean reversion a must be > 0, got {}", self.a)));
                }
            }
            ProcessKind::Bm | ProcessKind::Bridge => {}
        }
        Ok(self)
    }

    /// Value of the process at `t = 0`.
    pub fn start_value(&self) -> f64 {
        if self.kind == ProcessKind::Geometric {
            1.0
        } else {
            0.0
        }
    }

    /// Exact one-step OU coefficients on a grid with `n` steps: the decay
    /// `e^{-a/n}` and the factor `kappa` turning an `N(0, 1/n)` increment into
    /// the `N(0, (1 - e^{-2a/n}) / 2a)` innovation.
    pub fn ou_coefficients(&self, n: usize) -> (f64, f64) {
        let dt = 1.0 / n as f64;
        let decay = (-self.a * dt).exp();
        let var = -(-2.0 * self.a * dt).exp_m1() / (2.0 * self.a);
        (decay, (var / dt).sqrt())
    }

    pub fn label(&self) -> String {
        match self.kind {
            ProcessKind::Bm | ProcessKind::Bridge => self.kind.to_string(),
            ProcessKind::Distorted | ProcessKind::Geometric => {
                format!("{}(b={},sigma={})", self.kind, self.b, self.sigma)
            }
            ProcessKind::Ou => format!("ou(a={})", self.a),
        }
    }
}

/// One simulated trajectory together with the Brownian increments that built
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub grid: TimeGrid,
    pub process: ProcessSpec,
    /// `n + 1` node values.
    pub values: Vec<f64>,
    /// `n` i.i.d. `N(0, 1/n)` increments.
    pub driving: Vec<f64>,
    pub seed_tag: u64,
}

impl PathSample {
    /// Empty buffer sized for `grid`, to be filled by [`simulate_into`].
    pub fn buffer(spec: ProcessSpec, grid: TimeGrid) -> Self {
        Self {
            grid,
            process: spec,
            values: vec![0.0; grid.n() + 1],
            driving: vec![0.0; grid.n()],
            seed_tag: 0,
        }
    }

    /// Value at the node nearest to `t`.
    pub fn at(&self, t: f64) -> f64 {
        self.values[self.grid.index_of(t)]
    }
}

/// Simulates one path of `spec` keyed by `seed_tag`.
pub fn simulate(spec: &ProcessSpec, grid: TimeGrid, seed_tag: u64) -> Result<PathSample> {
    let mut path = PathSample::buffer(spec.validated()?, grid);
    simulate_into(spec, grid, seed_tag, &mut path)?;
    Ok(path)
}

/// Same as [`simulate`] but reuses the buffers of `out`.
pub fn simulate_into(spec: &ProcessSpec, grid: TimeGrid, seed_tag: u64, out: &mut PathSample) -> Result<()> {
    let spec = spec.validated()?;
    let n = grid.n();
    out.grid = grid;
    out.process = spec;
    out.seed_tag = seed_tag;
    out.driving.resize(n, 0.0);
    out.values.resize(n + 1, 0.0);
    let sd = grid.dt().sqrt();
    let mut rng = rng::path_rng(seed_tag);
    for d in out.driving.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *d = z * sd;
    }
    fill_values(&spec, grid, &out.driving, &mut out.values);
    Ok(())
}

/// Builds a path from caller-supplied driving increments.
pub fn from_driving(spec: &ProcessSpec, grid: TimeGrid, driving: Vec<f64>, seed_tag: u64) -> Result<PathSample> {
    let spec = spec.validated()?;
    if driving.len() != grid.n() {
        return Err(GsurfError::Grid(format!(
            "driving has {} increments, grid has {} cells",
            driving.len(),
            grid.n()
        )));
    }
    if driving.iter().any(|d| !d.is_finite()) {
        return Err(GsurfError::Numeric("non-finite driving increment".into()));
    }
    let mut values = vec![0.0; grid.n() + 1];
    fill_values(&spec, grid, &driving, &mut values);
    Ok(PathSample { grid, process: spec, values, driving, seed_tag })
}

fn fill_values(spec: &ProcessSpec, grid: TimeGrid, driving: &[f64], values: &mut [f64]) {
    let n = grid.n();
    match spec.kind {
        ProcessKind::Ou => {
            let (decay, kappa) = spec.ou_coefficients(n);
            values[0] = 0.0;
            for i in 0..n {
                values[i + 1] = decay * values[i] + kappa * driving[i];
            }
        }
        _ => {
            values[0] = 0.0;
            let mut b = 0.0;
            for i in 0..n {
                b += driving[i];
                values[i + 1] = b;
            }
            match spec.kind {
                ProcessKind::Bm => {}
                ProcessKind::Distorted => {
                    for (i, v) in values.iter_mut().enumerate() {
                        *v = spec.b * grid.node(i) + spec.sigma * *v;
                    }
                }
                ProcessKind::Geometric => {
                    let drift = spec.b - 0.5 * spec.sigma * spec.sigma;
                    for (i, v) in values.iter_mut().enumerate() {
                        *v = (drift * grid.node(i) + spec.sigma * *v).exp();
                    }
                }
                ProcessKind::Bridge => {
                    let end = values[n];
                    for (i, v) in values.iter_mut().enumerate() {
                        *v -= grid.node(i) * end;
                    }
                    values[n] = 0.0;
                }
                ProcessKind::Ou => unreachable!(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Min,
    Max,
}

/// How the extremum between grid nodes is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    /// Grid extremum only.
    None,
    /// Exact Brownian-bridge sampling inside every cell. Available for the
    /// processes with constant diffusion in their natural coordinates.
    Exact,
    /// As `Exact`, and additionally treats an OU cell as a Brownian bridge with
    /// the exact one-step variance (relative error `O(a / n)`).
    LocalBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremumRecord {
    pub value: f64,
    pub tau: f64,
    pub grid_index: usize,
    pub refined: bool,
    pub tie_count: usize,
}

/// Grid or bridge-refined extremum of `path`.
pub fn extremum(path: &PathSample, kind: ExtremumKind, refine: bool) -> Result<ExtremumRecord> {
    extremum_with(path, kind, if refine { Refinement::Exact } else { Refinement::None })
}

pub fn extremum_with(path: &PathSample, kind: ExtremumKind, refine: Refinement) -> Result<ExtremumRecord> {
    let values = &path.values;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GsurfError::Numeric("path has non-finite values".into()));
    }
    let (grid_index, grid_value) = grid_extremum(values, kind);
    let tie_count = values.iter().filter(|v| (**v - grid_value).abs() <= TIE_TOLERANCE).count();
    let grid_record = ExtremumRecord {
        value: grid_value,
        tau: path.grid.node(grid_index),
        grid_index,
        refined: false,
        tie_count,
    };
    let vol2 = match (refine, path.process.kind) {
        (Refinement::None, _) => return Ok(grid_record),
        (_, ProcessKind::Bm | ProcessKind::Bridge) => path.grid.dt(),
        (_, ProcessKind::Distorted | ProcessKind::Geometric) => path.process.sigma.powi(2) * path.grid.dt(),
        (Refinement::LocalBridge, ProcessKind::Ou) => {
            let (_, kappa) = path.process.ou_coefficients(path.grid.n());
            kappa * kappa * path.grid.dt()
        }
        (Refinement::Exact, ProcessKind::Ou) => {
            return Err(GsurfError::UnsupportedRefinement(
                "exact bridge refinement needs constant diffusion; ou has none".into(),
            ))
        }
    };
    let geometric = path.process.kind == ProcessKind::Geometric;
    let sign = match kind {
        ExtremumKind::Min => 1.0,
        ExtremumKind::Max => -1.0,
    };
    // Natural coordinates, oriented so that we always look for a minimum.
    let ys: Vec<f64> = values
        .iter()
        .map(|&v| sign * if geometric { v.ln() } else { v })
        .collect();
    let salt = match kind {
        ExtremumKind::Min => 0,
        ExtremumKind::Max => 1,
    };
    let n = path.grid.n();
    let sample_cell = |c: usize| -> f64 {
        let u = rng::keyed_uniform(path.seed_tag, 2 * c as u64 + salt);
        bridge_min_inverse(ys[c], ys[c + 1], vol2, u)
    };
    let mut best = f64::INFINITY;
    let mut best_cell = 0usize;
    let first = grid_index.saturating_sub(1);
    let last = grid_index.min(n - 1);
    for c in first..=last {
        let y = sample_cell(c);
        if y < best || (y == best && c < best_cell) {
            best = y;
            best_cell = c;
        }
    }
    for c in 0..n {
        if (first..=last).contains(&c) {
            continue;
        }
        let exponent = 2.0 * (ys[c] - best) * (ys[c + 1] - best) / vol2;
        if exponent > SKIP_EXPONENT {
            continue;
        }
        let y = sample_cell(c);
        if y < best || (y == best && c < best_cell) {
            best = y;
            best_cell = c;
        }
    }
    let natural = sign * best;
    let mut cell_rng = rng::cell_rng(path.seed_tag, 2 * best_cell as u64 + salt);
    let frac = bridge_argmin_fraction(ys[best_cell] - best, ys[best_cell + 1] - best, vol2, &mut cell_rng);
    Ok(ExtremumRecord {
        value: if geometric { natural.exp() } else { natural },
        tau: path.grid.node(best_cell) + frac * path.grid.dt(),
        grid_index: best_cell,
        refined: true,
        tie_count,
    })
}

/// Inverse CDF of the minimum of a Brownian bridge from `x0` to `x1` with
/// total variance `vol2` over the cell:
/// `P(min <= y) = exp(-2 (x0 - y)(x1 - y) / vol2)`.
#[inline]
pub fn bridge_min_inverse(x0: f64, x1: f64, vol2: f64, u: f64) -> f64 {
    let d = x1 - x0;
    0.5 * (x0 + x1 - (d * d - 2.0 * vol2 * u.ln()).sqrt())
}

/// Location of the minimum of a Brownian bridge over one cell, as a fraction
/// of the cell, given that the minimum lies `a` below the left value and `b`
/// below the right value.
///
/// With `w = u / (1 - u)` the density is proportional to
/// `(w^{-3/2} + w^{-1/2}) exp(-A / w - B w)`, `A = a^2 / (2 vol2)`,
/// `B = b^2 / (2 vol2)`: an inverse Gaussian `IG(a / b, a^2 / vol2)` with
/// probability `b / (a + b)`, otherwise the reciprocal of `IG(b / a, b^2 / vol2)`.
pub fn bridge_argmin_fraction<R: Rng>(a: f64, b: f64, vol2: f64, rng: &mut R) -> f64 {
    if !(a > 0.0) {
        return 0.0;
    }
    if !(b > 0.0) {
        return 1.0;
    }
    let pick: f64 = rng.random();
    let w = if pick * (a + b) < b {
        InverseGaussian::new(a / b, a * a / vol2).map_or(a / b, |d| d.sample(rng))
    } else {
        1.0 / InverseGaussian::new(b / a, b * b / vol2).map_or(b / a, |d| d.sample(rng))
    };
    if w.is_finite() {
        (w / (1.0 + w)).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// First-index grid extremum.
pub fn grid_extremum(values: &[f64], kind: ExtremumKind) -> (usize, f64) {
    let mut idx = 0;
    let mut best = values[0];
    for (i, &v) in values.iter().enumerate().skip(1) {
        let better = match kind {
            ExtremumKind::Min => v < best,
            ExtremumKind::Max => v > best,
        };
        if better {
            best = v;
            idx = i;
        }
    }
    (idx, best)
}

/// Prefix extremum `S(t_i)`.
pub fn running_extremum(values: &[f64], kind: ExtremumKind) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut cur = match values.first() {
        Some(v) => *v,
        None => return out,
    };
    for &v in values {
        cur = match kind {
            ExtremumKind::Min => cur.min(v),
            ExtremumKind::Max => cur.max(v),
        };
        out.push(cur);
    }
    out
}

/// Node index where the prefix extremum over `0..=i` is attained (first index
/// on ties).
pub fn running_arg_extremum(values: &[f64], kind: ExtremumKind) -> Vec<usize> {
    let mut out = Vec::with_capacity(values.len());
    let mut best_i = 0usize;
    for (i, &v) in values.iter().enumerate() {
        let better = match kind {
            ExtremumKind::Min => v < values[best_i],
            ExtremumKind::Max => v > values[best_i],
        };
        if better {
            best_i = i;
        }
        out.push(best_i);
    }
    out
}

/// Central difference `(g(x + dz) - g(x - dz)) / 2d` with the perturbation
/// applied to the node values.
pub fn finite_diff_directional<G>(g: G, path: &PathSample, z: &CameronMartinVector, delta: f64) -> Result<f64>
where
    G: Fn(&[f64]) -> f64,
{
    if !(delta > 0.0) {
        return Err(GsurfError::Parameter(format!("delta must be > 0, got {delta}")));
    }
    if z.z_values.len() != path.values.len() {
        return Err(GsurfError::Grid("direction and path live on different grids".into()));
    }
    let plus: Vec<f64> = path.values.iter().zip(&z.z_values).map(|(x, z)| x + delta * z).collect();
    let minus: Vec<f64> = path.values.iter().zip(&z.z_values).map(|(x, z)| x - delta * z).collect();
    let out = (g(&plus) - g(&minus)) / (2.0 * delta);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(GsurfError::Numeric("directional difference is not finite".into()))
    }
}

/// Central difference of a path functional when the driving increments are
/// shifted by `delta * h_j / n`, i.e. the driving Brownian motion is moved in
/// the Cameron–Martin direction with derivative `h`.
pub fn finite_diff_driving<G>(g: G, path: &PathSample, h: &[f64], delta: f64) -> Result<f64>
where
    G: Fn(&PathSample) -> f64,
{
    if !(delta > 0.0) {
        return Err(GsurfError::Parameter(format!("delta must be > 0, got {delta}")));
    }
    if h.len() != path.driving.len() {
        return Err(GsurfError::Grid("direction and path live on different grids".into()));
    }
    let dt = path.grid.dt();
    let shifted = |s: f64| -> Result<PathSample> {
        let driving = path.driving.iter().zip(h).map(|(d, h)| d + s * h * dt).collect();
        from_driving(&path.process, path.grid, driving, path.seed_tag)
    };
    let out = (g(&shifted(delta)?) - g(&shifted(-delta)?)) / (2.0 * delta);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(GsurfError::Numeric("directional difference is not finite".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n).unwrap()
    }

    #[test]
    fn grid_rejects_tiny_n() {
        assert!(matches!(TimeGrid::new(1), Err(GsurfError::Grid(_))));
        let g = grid(4);
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(ProcessSpec::distorted(1.0, 0.0), Err(GsurfError::Parameter(_))));
        assert!(matches!(ProcessSpec::geometric(1.0, -1.0), Err(GsurfError::Parameter(_))));
        assert!(matches!(ProcessSpec::ou(0.0), Err(GsurfError::Parameter(_))));
        assert!(ProcessSpec::ou(1.0).is_ok());
    }

    #[test]
    fn zero_noise_paths() {
        let g = grid(10);
        let bm = from_driving(&ProcessSpec::bm(), g, vec![0.0; 10], 0).unwrap();
        assert!(bm.values.iter().all(|v| *v == 0.0));
        let d = from_driving(&ProcessSpec::distorted(1.0, 1.0).unwrap(), g, vec![0.0; 10], 0).unwrap();
        for (i, v) in d.values.iter().enumerate() {
            assert!((v - g.node(i)).abs() < 1e-15);
        }
        let rec = extremum(&d, ExtremumKind::Max, false).unwrap();
        assert_eq!(rec.value, 1.0);
        assert_eq!(rec.tau, 1.0);
    }

    #[test]
    fn bridge_and_geometric_invariants() {
        let g = grid(500);
        for tag in 0..20 {
            let b = simulate(&ProcessSpec::bridge(), g, tag).unwrap();
            assert_eq!(b.values[500], 0.0);
            assert_eq!(b.values[0], 0.0);
            let geo = simulate(&ProcessSpec::geometric(0.3, 0.8).unwrap(), g, tag).unwrap();
            assert_eq!(geo.values[0], 1.0);
            assert!(geo.values.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let g = grid(300);
        for spec in [ProcessSpec::bm(), ProcessSpec::ou(2.0).unwrap()] {
            let a = simulate(&spec, g, 99).unwrap();
            let b = simulate(&spec, g, 99).unwrap();
            assert_eq!(a, b);
            let c = simulate(&spec, g, 100).unwrap();
            assert_ne!(a.values, c.values);
        }
    }

    #[test]
    fn grid_extremum_examples() {
        let g = grid(2);
        let p = PathSample {
            grid: g,
            process: ProcessSpec::bm(),
            values: vec![0.0, 1.0, 0.5],
            driving: vec![1.0, -0.5],
            seed_tag: 0,
        };
        let rec = extremum(&p, ExtremumKind::Max, false).unwrap();
        assert_eq!((rec.value, rec.tau, rec.tie_count), (1.0, 0.5, 1));

        let z = from_driving(&ProcessSpec::bm(), grid(8), vec![0.0; 8], 0).unwrap();
        let rec = extremum(&z, ExtremumKind::Min, false).unwrap();
        assert_eq!((rec.value, rec.grid_index, rec.tie_count), (0.0, 0, 9));
    }

    #[test]
    fn running_extremum_examples() {
        let v = [0.0, -1.0, 2.0];
        assert_eq!(running_extremum(&v, ExtremumKind::Max), vec![0.0, 0.0, 2.0]);
        assert_eq!(running_extremum(&v, ExtremumKind::Min), vec![0.0, -1.0, -1.0]);
        let inc = [0.0, 0.1, 0.5, 0.7];
        assert_eq!(running_extremum(&inc, ExtremumKind::Max), inc.to_vec());
        assert_eq!(running_arg_extremum(&v, ExtremumKind::Max), vec![0, 0, 2]);
    }

    #[test]
    fn refinement_never_worse_and_ou_guarded() {
        let g = grid(200);
        for tag in 0..50 {
            let p = simulate(&ProcessSpec::bm(), g, tag).unwrap();
            let grid_min = extremum(&p, ExtremumKind::Min, false).unwrap();
            let fine = extremum(&p, ExtremumKind::Min, true).unwrap();
            assert!(fine.value <= grid_min.value);
            assert!(fine.refined);
            let grid_max = extremum(&p, ExtremumKind::Max, false).unwrap();
            let fine_max = extremum(&p, ExtremumKind::Max, true).unwrap();
            assert!(fine_max.value >= grid_max.value);
            // deterministic
            assert_eq!(fine, extremum(&p, ExtremumKind::Min, true).unwrap());
        }
        let ou = simulate(&ProcessSpec::ou(1.0).unwrap(), g, 1).unwrap();
        assert!(matches!(
            extremum(&ou, ExtremumKind::Min, true),
            Err(GsurfError::UnsupportedRefinement(_))
        ));
        assert!(extremum_with(&ou, ExtremumKind::Min, Refinement::LocalBridge).is_ok());
    }

    #[test]
    fn skipping_cells_is_exact() {
        // Brute force over every cell must agree with the pruned scan.
        let g = grid(400);
        for tag in 0..30 {
            let p = simulate(&ProcessSpec::distorted(0.5, 1.5).unwrap(), g, tag).unwrap();
            let rec = extremum(&p, ExtremumKind::Min, true).unwrap();
            let vol2 = 1.5f64.powi(2) * g.dt();
            let (mut best, mut cell) = (f64::INFINITY, 0);
            for c in 0..400 {
                let u = rng::keyed_uniform(p.seed_tag, 2 * c as u64);
                let y = bridge_min_inverse(p.values[c], p.values[c + 1], vol2, u);
                if y < best {
                    best = y;
                    cell = c;
                }
            }
            assert_eq!(rec.value, best);
            assert_eq!(rec.grid_index, cell);
        }
    }

    #[test]
    fn ou_transition_variance_matches_stochastic_integral() {
        // Oracle: Var of int_0^1 e^{-(1-s)} dB(s) by brute-force Riemann-Ito
        // sums on a fine grid, compared with the single-step exact variance.
        let spec = ProcessSpec::ou(1.0).unwrap();
        let coarse = TimeGrid::new(2).unwrap();
        let (decay, kappa) = spec.ou_coefficients(2);
        // two-step composition gives the unit-horizon variance
        let var_exact = (decay * decay + 1.0) * kappa * kappa * coarse.dt();
        assert!((var_exact - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-14);
        assert!((var_exact - 0.432332).abs() < 1e-6);

        let fine = 400;
        let paths = 40_000;
        let mut sum2 = 0.0;
        for p in 0..paths {
            let mut r = rng::path_rng(rng::path_seed_tag(5, p));
            let mut acc = 0.0;
            for i in 0..fine {
                let s = (i as f64 + 0.5) / fine as f64;
                let db: f64 = r.sample::<f64, _>(StandardNormal) / (fine as f64).sqrt();
                acc += (-(1.0 - s)).exp() * db;
            }
            sum2 += acc * acc;
        }
        let mc = sum2 / paths as f64;
        // se of a chi-square mean: var * sqrt(2 / N)
        let se = var_exact * (2.0 / paths as f64).sqrt();
        assert!((mc - var_exact).abs() < 4.0 * se, "mc {mc} exact {var_exact}");
    }

    #[test]
    fn argmin_fraction_matches_density_moments() {
        // Oracle: first two moments of u under the density
        // u^{-3/2} (1-u)^{-3/2} exp(-a^2/(2 v u) - b^2/(2 v (1-u))) by quadrature.
        for &(a, b, v) in &[(0.3, 0.1, 0.25), (0.05, 0.4, 0.5), (0.2, 0.2, 0.1)] {
            let f = |u: f64| {
                if u <= 0.0 || u >= 1.0 {
                    return 0.0;
                }
                (u * (1.0 - u)).powf(-1.5) * (-a * a / (2.0 * v * u) - b * b / (2.0 * v * (1.0 - u))).exp()
            };
            let z = crate::quadrature::integrate(f, 0.0, 1.0, 1e-12, 1e-10).unwrap();
            let m1 = crate::quadrature::integrate(|u| u * f(u), 0.0, 1.0, 1e-12, 1e-10).unwrap() / z;
            let m2 = crate::quadrature::integrate(|u| u * u * f(u), 0.0, 1.0, 1e-12, 1e-10).unwrap() / z;
            let n = 200_000;
            let mut r = rng::path_rng(17);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let u = bridge_argmin_fraction(a, b, v, &mut r);
                assert!((0.0..=1.0).contains(&u));
                s1 += u;
                s2 += u * u;
            }
            let (e1, e2) = (s1 / n as f64, s2 / n as f64);
            let se = ((m2 - m1 * m1) / n as f64).sqrt();
            assert!((e1 - m1).abs() < 4.0 * se, "a={a} b={b}: {e1} vs {m1}");
            assert!((e2 - m2).abs() < 0.01, "a={a} b={b}: {e2} vs {m2}");
        }
        let mut r = rng::path_rng(1);
        assert_eq!(bridge_argmin_fraction(0.0, 0.5, 0.1, &mut r), 0.0);
        assert_eq!(bridge_argmin_fraction(0.5, 0.0, 0.1, &mut r), 1.0);
    }
}
