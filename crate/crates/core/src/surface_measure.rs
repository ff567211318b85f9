//! Thin-shell estimators of `rho_phi(r)`, kernel regressions of
//! `E[phi | g = r]` and `E[phi | g = r, tau = s]`, and the check of the
//! Skorokhod representation of `F'_phi(r)`.

use serde::{Deserialize, Serialize};

use crate::error::{GsurfError, Result};
use crate::functional::CylindricalFunctional;
use crate::malliavin::{hypothesis_fields, skorokhod_u_over_gamma, CutoffSpec, GAMMA_FLOOR};
use crate::mc::{map_paths, MCEstimate, Moments, Stream};
use crate::path_engine::{extremum_with, ExtremumKind, ProcessKind, ProcessSpec, Refinement, TimeGrid};

/// Blocks used by the leave-one-block-out standard error.
pub const JACKKNIFE_BLOCKS: usize = 20;
/// Kernel regressions with fewer effective samples are flagged degenerate.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellConfig {
    pub r: f64,
    pub eps_schedule: Vec<f64>,
    pub n_paths: usize,
    /// Kernel bandwidth; `None` selects the halved Silverman rule.
    pub bandwidth: Option<f64>,
}

impl ShellConfig {
    pub fn new(r: f64, n_paths: usize) -> Self {
        Self { r, eps_schedule: vec![0.2, 0.1, 0.05, 0.025], n_paths, bandwidth: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_schedule.is_empty() || self.eps_schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(GsurfError::Config("eps schedule must be non-empty and positive".into()));
        }
        if self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(GsurfError::Config("eps schedule must be strictly decreasing".into()));
        }
        if self.n_paths < 1000 {
            return Err(GsurfError::Config(format!("n_paths must be >= 1000, got {}", self.n_paths)));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(GsurfError::Config(format!("bandwidth must be > 0, got {h}")));
            }
        }
        Ok(())
    }
}

/// Per-path extremum, its location and functional values.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSample {
    pub g: Vec<f64>,
    pub tau: Vec<f64>,
    /// `phi[k][i]`: functional `k` on path `i`.
    pub phi: Vec<Vec<f64>>,
    pub seed: u64,
}

impl LevelSample {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

/// Refinement that is exact for `spec`, or the local-bridge approximation for
/// OU.
pub fn default_refinement(spec: &ProcessSpec) -> Refinement {
    if spec.kind == ProcessKind::Ou {
        Refinement::LocalBridge
    } else {
        Refinement::Exact
    }
}

/// Simulates a batch and records the bridge-refined extremum and each
/// functional.
pub fn sample_levels(
    spec: &ProcessSpec,
    grid: TimeGrid,
    stream: Stream,
    n_paths: usize,
    kind: ExtremumKind,
    phis: &[CylindricalFunctional],
) -> Result<LevelSample> {
    let refine = default_refinement(spec);
    let rows = map_paths(spec, grid, stream, n_paths, |p| {
        let r = extremum_with(p, kind, refine)?;
        let vals: Vec<f64> = phis.iter().map(|f| f.eval(&p.values)).collect();
        Ok((r.value, r.tau, vals))
    })?;
    let mut out = LevelSample {
        g: Vec::with_capacity(n_paths),
        tau: Vec::with_capacity(n_paths),
        phi: vec![Vec::with_capacity(n_paths); phis.len()],
        seed: stream.key(),
    };
    for (g, t, v) in rows {
        out.g.push(g);
        out.tau.push(t);
        for (k, x) in v.into_iter().enumerate() {
            out.phi[k].push(x);
        }
    }
    Ok(out)
}

/// `(1 / 2 eps) mean[phi 1{|g - r| <= eps}]`; `phi = None` means `phi = 1`.
pub fn shell_from(g: &[f64], phi: Option<&[f64]>, r: f64, eps: f64, seed: u64) -> Result<MCEstimate> {
    if !(eps > 0.0) {
        return Err(GsurfError::Parameter(format!("eps must be > 0, got {eps}")));
    }
    let mut m = Moments::default();
    let mut hits = 0usize;
    for (i, &gi) in g.iter().enumerate() {
        let inside = (gi - r).abs() <= eps;
        hits += inside as usize;
        let y = if inside { phi.map_or(1.0, |p| p[i]) / (2.0 * eps) } else { 0.0 };
        m.push(y);
    }
    if hits == 0 {
        return Ok(MCEstimate::degenerate(g.len(), seed));
    }
    Ok(m.estimate(seed))
}

/// Least-squares intercept weights for the model `A + B eps^2`.
pub fn richardson_weights(eps: &[f64]) -> Vec<f64> {
    if eps.len() == 1 {
        return vec![1.0];
    }
    let m = eps.len() as f64;
    let x: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let sx: f64 = x.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let det = m * sxx - sx * sx;
    x.iter().map(|xj| (sxx - sx * xj) / det).collect()
}

/// Per-path Richardson combination `sum_j c_j 1{|g - r| <= eps_j} / (2 eps_j)`.
pub fn richardson_term(g: f64, r: f64, eps: &[f64], weights: &[f64]) -> f64 {
    let d = (g - r).abs();
    eps.iter().zip(weights).filter(|(e, _)| d <= **e).map(|(e, c)| c / (2.0 * e)).sum()
}

/// Richardson-extrapolated shell estimate; the standard error comes from the
/// per-path combination of all shells.
pub fn density_from(g: &[f64], phi: Option<&[f64]>, r: f64, eps: &[f64], seed: u64) -> Result<MCEstimate> {
    if eps.is_empty() || eps.windows(2).any(|w| w[1] >= w[0]) || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(GsurfError::Config("eps schedule must be positive and strictly decreasing".into()));
    }
    let c = richardson_weights(eps);
    let mut m = Moments::default();
    let mut hits = 0usize;
    let smallest = *eps.last().expect("non-empty");
    for (i, &gi) in g.iter().enumerate() {
        hits += ((gi - r).abs() <= smallest) as usize;
        m.push(phi.map_or(1.0, |p| p[i]) * richardson_term(gi, r, eps, &c));
    }
    if hits == 0 {
        return Ok(MCEstimate::degenerate(g.len(), seed));
    }
    Ok(m.estimate(seed))
}

/// Silverman's rule `1.06 sd N^{-1/5}`, halved.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let m = Moments::from_slice(x);
    0.5 * 1.06 * m.var().sqrt() * (x.len() as f64).powf(-0.2)
}

/// Same rule with the two-dimensional rate `N^{-1/6}`.
pub fn silverman_bandwidth_2d(x: &[f64]) -> f64 {
    let m = Moments::from_slice(x);
    0.5 * 1.06 * m.var().sqrt() * (x.len() as f64).powf(-1.0 / 6.0)
}

/// Result of a kernel regression: the estimate and the effective sample
/// size `(sum w)^2 / sum w^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub estimate: MCEstimate,
    pub ess: f64,
}

/// Kernel-weighted sums split over contiguous index blocks, the raw material
/// of a Nadaraya–Watson ratio and its leave-one-block-out resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRatio {
    pub sw: [f64; JACKKNIFE_BLOCKS],
    pub swy: [f64; JACKKNIFE_BLOCKS],
    pub sw2: f64,
    pub n: usize,
}

impl BlockRatio {
    pub fn from_terms<I>(n: usize, terms: I) -> Self
    where
        I: Iterator<Item = (usize, f64, f64)>,
    {
        let mut out = Self { sw: [0.0; JACKKNIFE_BLOCKS], swy: [0.0; JACKKNIFE_BLOCKS], sw2: 0.0, n };
        let block = n.div_ceil(JACKKNIFE_BLOCKS).max(1);
        for (i, w, y) in terms {
            let b = (i / block).min(JACKKNIFE_BLOCKS - 1);
            out.sw[b] += w;
            out.swy[b] += w * y;
            out.sw2 += w * w;
        }
        out
    }

    pub fn ess(&self) -> f64 {
        let tw: f64 = self.sw.iter().sum();
        if self.sw2 > 0.0 {
            tw * tw / self.sw2
        } else {
            0.0
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.ess() < MIN_EFFECTIVE_SAMPLES
    }

    pub fn value(&self) -> f64 {
        let tw: f64 = self.sw.iter().sum();
        self.swy.iter().sum::<f64>() / tw
    }

    /// Ratio with block `b` left out.
    pub fn without(&self, b: usize) -> f64 {
        let tw: f64 = self.sw.iter().sum::<f64>() - self.sw[b];
        if tw > 0.0 {
            (self.swy.iter().sum::<f64>() - self.swy[b]) / tw
        } else {
            self.value()
        }
    }

    pub fn estimate(&self, seed: u64) -> KernelEstimate {
        let ess = self.ess();
        if self.is_degenerate() {
            return KernelEstimate { estimate: MCEstimate::degenerate(self.n, seed), ess };
        }
        let se = jackknife_se(|b| self.without(b));
        KernelEstimate { estimate: MCEstimate::new(self.value(), se, self.n, seed), ess }
    }
}

/// Leave-one-block-out standard error of a statistic given its value with
/// each block removed.
pub fn jackknife_se<F: Fn(usize) -> f64>(loo: F) -> f64 {
    let k = JACKKNIFE_BLOCKS as f64;
    let vals: Vec<f64> = (0..JACKKNIFE_BLOCKS).map(loo).collect();
    let mean = vals.iter().sum::<f64>() / k;
    ((k - 1.0) / k * vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
}

#[inline]
fn gauss(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

/// Indices and Gaussian kernel weights of the samples within `8 h` of `r`.
pub fn kernel_terms(g: &[f64], r: f64, h: f64) -> Result<Vec<(usize, f64)>> {
    if !(h > 0.0) {
        return Err(GsurfError::Parameter(format!("bandwidth must be > 0, got {h}")));
    }
    let cut = 8.0 * h;
    Ok(g.iter()
        .enumerate()
        .filter_map(|(i, &gi)| {
            let d = gi - r;
            (d.abs() <= cut).then(|| (i, gauss(d / h)))
        })
        .collect())
}

/// `E[y | g = r]` with a Gaussian kernel of bandwidth `h` in `g`;
/// `y = None` means `y = 1`.
pub fn nw_from(g: &[f64], y: Option<&[f64]>, r: f64, h: f64, seed: u64) -> Result<KernelEstimate> {
    let terms = kernel_terms(g, r, h)?;
    let ratio = BlockRatio::from_terms(g.len(), terms.iter().map(|&(i, w)| (i, w, y.map_or(1.0, |v| v[i]))));
    Ok(ratio.estimate(seed))
}

/// `theta = 2 arcsin(sqrt(s))`, the coordinate in which the argmin location is
/// smoothed.
pub fn tau_coordinate(s: f64) -> f64 {
    2.0 * s.clamp(0.0, 1.0).sqrt().asin()
}

/// `E[y | g = r, tau = s]` with a product Gaussian kernel in `(g, theta)`.
#[allow(clippy::too_many_arguments)]
pub fn nw2_from(
    g: &[f64],
    theta: &[f64],
    y: Option<&[f64]>,
    r: f64,
    s: f64,
    h_g: f64,
    h_theta: f64,
    seed: u64,
) -> Result<KernelEstimate> {
    Ok(nw2_blocks(g, theta, y, r, s, h_g, h_theta)?.estimate(seed))
}

/// Block sums behind [`nw2_from`].
pub fn nw2_blocks(
    g: &[f64],
    theta: &[f64],
    y: Option<&[f64]>,
    r: f64,
    s: f64,
    h_g: f64,
    h_theta: f64,
) -> Result<BlockRatio> {
    if !(h_g > 0.0 && h_theta > 0.0) {
        return Err(GsurfError::Parameter("bandwidths must be > 0".into()));
    }
    let t0 = tau_coordinate(s);
    let (cg, ct) = (8.0 * h_g, 8.0 * h_theta);
    let terms = g.iter().zip(theta).enumerate().filter_map(|(i, (&gi, &ti))| {
        let (dg, dt) = (gi - r, ti - t0);
        (dg.abs() <= cg && dt.abs() <= ct).then(|| (i, gauss(dg / h_g) * gauss(dt / h_theta), y.map_or(1.0, |v| v[i])))
    });
    Ok(BlockRatio::from_terms(g.len(), terms))
}

/// Thin-shell estimate at one `eps`.
pub fn shell_estimate(
    phi: &CylindricalFunctional,
    process: &ProcessSpec,
    config: &ShellConfig,
    eps: f64,
    grid: TimeGrid,
    stream: Stream,
) -> Result<MCEstimate> {
    config.validate()?;
    let s = sample_levels(process, grid, stream, config.n_paths, ExtremumKind::Min, std::slice::from_ref(phi))?;
    shell_from(&s.g, Some(&s.phi[0]), config.r, eps, s.seed)
}

/// `rho_phi(r)` by Richardson extrapolation in `eps^2`.
pub fn density_estimate(
    phi: &CylindricalFunctional,
    process: &ProcessSpec,
    config: &ShellConfig,
    grid: TimeGrid,
    stream: Stream,
) -> Result<MCEstimate> {
    config.validate()?;
    let s = sample_levels(process, grid, stream, config.n_paths, ExtremumKind::Min, std::slice::from_ref(phi))?;
    density_from(&s.g, Some(&s.phi[0]), config.r, &config.eps_schedule, s.seed)
}

/// `E[phi | g = r]`.
pub fn cond_exp_g(
    phi: &CylindricalFunctional,
    process: &ProcessSpec,
    r: f64,
    bandwidth: Option<f64>,
    n_paths: usize,
    grid: TimeGrid,
    stream: Stream,
) -> Result<KernelEstimate> {
    let s = sample_levels(process, grid, stream, n_paths, ExtremumKind::Min, std::slice::from_ref(phi))?;
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(&s.g));
    nw_from(&s.g, Some(&s.phi[0]), r, h, s.seed)
}

/// `E[phi | g = r, tau = s]`.
#[allow(clippy::too_many_arguments)]
pub fn cond_exp_g_tau(
    phi: &CylindricalFunctional,
    process: &ProcessSpec,
    r: f64,
    s: f64,
    bandwidths: Option<(f64, f64)>,
    n_paths: usize,
    grid: TimeGrid,
    stream: Stream,
) -> Result<KernelEstimate> {
    let b = sample_levels(process, grid, stream, n_paths, ExtremumKind::Min, std::slice::from_ref(phi))?;
    let theta: Vec<f64> = b.tau.iter().map(|t| tau_coordinate(*t)).collect();
    let (hg, ht) = bandwidths.unwrap_or_else(|| (silverman_bandwidth_2d(&b.g), silverman_bandwidth_2d(&theta)));
    nw2_from(&b.g, &theta, Some(&b.phi[0]), r, s, hg, ht, b.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma21Report {
    pub lhs: MCEstimate,
    pub rhs: MCEstimate,
    pub z_score: f64,
    /// Paths with `gamma` below the floor, left out of the right side.
    pub excluded: usize,
}

/// Finite-difference slope of `F_phi(r) = E[phi 1{g <= r}]` for the Brownian
/// maximum against `E[1{g >= r} M*(phi u / gamma)]` on an independent batch.
pub fn lemma21_check(
    phi: &CylindricalFunctional,
    cutoff: &CutoffSpec,
    r: f64,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<Lemma21Report> {
    if !(r > cutoff.a) {
        return Err(GsurfError::Precondition(format!("level {r} must exceed the cutoff {}", cutoff.a)));
    }
    let spec = ProcessSpec::bm();
    let dr = 0.01;
    let a_stream = Stream::new(seed, 21);
    let lhs_samples = map_paths(&spec, grid, a_stream, n_paths, |p| {
        let g = crate::path_engine::grid_extremum(&p.values, ExtremumKind::Max).1;
        let inside = g > r - dr && g <= r + dr;
        Ok(if inside { phi.eval(&p.values) / (2.0 * dr) } else { 0.0 })
    })?;
    let lhs = MCEstimate::from_samples(&lhs_samples, a_stream.key());
    let b_stream = Stream::new(seed, 22);
    let terms = skorokhod_terms(phi, cutoff, n_paths, grid, b_stream)?;
    let mut m = Moments::default();
    let mut excluded = 0;
    for t in &terms {
        match t.m_star {
            Some(v) => m.push(if t.g >= r { v } else { 0.0 }),
            None => {
                excluded += 1;
                m.push(0.0)
            }
        }
    }
    let rhs = m.estimate(b_stream.key());
    Ok(Lemma21Report { lhs, rhs, z_score: lhs.z_score(&rhs), excluded })
}

/// Per-path grid maximum, `gamma` and `M*(phi u / gamma)` (None when `gamma`
/// is below the floor) for Brownian paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkorokhodTerm {
    pub g: f64,
    pub gamma: f64,
    pub m_star: Option<f64>,
}

pub fn skorokhod_terms(
    phi: &CylindricalFunctional,
    cutoff: &CutoffSpec,
    n_paths: usize,
    grid: TimeGrid,
    stream: Stream,
) -> Result<Vec<SkorokhodTerm>> {
    let spec = ProcessSpec::bm();
    let idx = phi.indices(grid);
    map_paths(&spec, grid, stream, n_paths, |p| {
        let f = hypothesis_fields(&spec, p, cutoff)?;
        let (val, grad) = phi.eval_with_grad(&p.values);
        // <M phi, u> = sum_i d_i f (1/n) sum_{j < idx_i} u_j
        let n = grid.n();
        let mut m_phi_u = 0.0;
        if !grad.is_empty() {
            let mut prefix = vec![0.0; n + 1];
            for j in 0..n {
                prefix[j + 1] = prefix[j] + f.u[j];
            }
            m_phi_u = grad.iter().zip(&idx).map(|(d, &i)| d * prefix[i]).sum::<f64>() / n as f64;
        }
        let m_star = if f.gamma < GAMMA_FLOOR { None } else { Some(skorokhod_u_over_gamma(&f, p, val, m_phi_u)?) };
        Ok(SkorokhodTerm { g: f.max_value, gamma: f.gamma, m_star })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richardson_weights_reproduce_quadratics() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let c = richardson_weights(&eps);
        let val: f64 = eps.iter().zip(&c).map(|(e, cj)| cj * (3.0 + 7.0 * e * e)).sum();
        assert!((val - 3.0).abs() < 1e-12);
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shell_trivia_and_linearity() {
        let g = [-1.0, -0.99, -0.5, -1.02, -2.0];
        let phi = [2.0, 3.0, 5.0, 7.0, 11.0];
        let one = shell_from(&g, None, -1.0, 0.025, 0).unwrap();
        assert!((one.mean - 3.0 / 5.0 / 0.05).abs() < 1e-12);
        let zero = shell_from(&g, Some(&[0.0; 5]), -1.0, 0.025, 0).unwrap();
        assert_eq!(zero.mean, 0.0);
        let c = shell_from(&g, Some(&[4.0; 5]), -1.0, 0.025, 0).unwrap();
        assert_eq!(c.mean, 4.0 * one.mean);
        let p = shell_from(&g, Some(&phi), -1.0, 0.025, 0).unwrap();
        assert!((p.mean - 12.0 / 5.0 / 0.05).abs() < 1e-12);
        assert!(shell_from(&g, None, 5.0, 0.01, 0).unwrap().is_degenerate());
        assert!(density_from(&g, None, -1.0, &[0.1, 0.2], 0).is_err());
    }

    #[test]
    fn kernel_regression_trivia() {
        let g: Vec<f64> = (0..2000).map(|i| -(i as f64) / 1000.0).collect();
        let y: Vec<f64> = g.iter().map(|v| v.sin()).collect();
        let one = nw_from(&g, None, -1.0, 0.05, 0).unwrap();
        assert_eq!(one.estimate.mean, 1.0);
        let e = nw_from(&g, Some(&y), -1.0, 0.05, 0).unwrap();
        assert!(e.estimate.mean.abs() <= 1.0);
        assert!((e.estimate.mean - (-1f64).sin()).abs() < 2e-3);
        assert!(nw_from(&g, None, -10.0, 0.01, 0).unwrap().estimate.is_degenerate());
        let theta: Vec<f64> = (0..2000).map(|i| tau_coordinate((i as f64 + 0.5) / 2000.0)).collect();
        let two = nw2_from(&g, &theta, None, -1.0, 0.5, 0.3, 0.5, 0).unwrap();
        assert_eq!(two.estimate.mean, 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = ShellConfig::new(-1.0, 5000);
        assert!(c.validate().is_ok());
        c.eps_schedule = vec![0.1, 0.2];
        assert!(matches!(c.validate(), Err(GsurfError::Config(_))));
    }

    #[test]
    fn lemma21_guard_and_zero_functional() {
        let grid = TimeGrid::new(64).unwrap();
        let c = CutoffSpec::new(1.0).unwrap();
        let zero = CylindricalFunctional::constant(0.0);
        assert!(matches!(lemma21_check(&zero, &c, 0.5, 1000, grid, 1), Err(GsurfError::Precondition(_))));
        let rep = lemma21_check(&zero, &c, 1.5, 2000, grid, 1).unwrap();
        assert_eq!(rep.lhs.mean, 0.0);
        assert_eq!(rep.rhs.mean, 0.0);
        assert_eq!(rep.excluded, 0);
    }
}
