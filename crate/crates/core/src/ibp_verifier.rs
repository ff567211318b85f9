//! Monte Carlo verification of the integration-by-parts identities: flat and
//! product forms, the half-space identity, its joint-density refinement, the
//! three `r -> 0` limits and the Neumann identity.
//!
//! Every check returns an [`IbpReport`]. Flat and product checks pair both
//! sides on common paths; all other checks estimate the two sides on
//! independent streams.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::conditioned_laws::{girsanov_weight, sample_bessel3_bridge, sample_meander, weighted_mean, MAX_TILT};
use crate::density_oracles::{bessel_weight, limit_constants, meander_weight, min_density, min_joint_density, survival};
use crate::error::{GsurfError, Result};
use crate::functional::CylindricalFunctional;
use crate::mc::{par_chunks, MCEstimate, Moments, Stream};
use crate::path_engine::{extremum_with, simulate_into, ExtremumKind, PathSample, ProcessKind, ProcessSpec, TimeGrid};
use crate::quadrature::{chebyshev_nodes, extrapolation_weights, integrate_unit};
use crate::spectral_ops::{cameron_martin_pairing, eigenpairs, stieltjes_pairing, CameronMartinVector, BRIDGE_END_TOLERANCE};
use crate::surface_measure::{
    default_refinement, jackknife_se, kernel_terms, nw2_blocks, richardson_term, richardson_weights, sample_levels,
    silverman_bandwidth, silverman_bandwidth_2d, tau_coordinate, BlockRatio, LevelSample,
};

/// A check passes when `|z| <= PASS_Z` and both sides have finite se.
pub const PASS_Z: f64 = 3.0;
/// Bandwidth halving may move a kernel estimate by at most this many combined
/// standard errors before the check is flagged as biased.
pub const BANDWIDTH_SHIFT_Z: f64 = 2.0;
/// Largest truncation order of the Neumann functionals.
pub const MAX_EIGENPAIRS: usize = 64;
/// Chebyshev nodes of the `s`-quadrature in the joint identity.
pub const JOINT_NODES: usize = 33;
/// Levels from which the `r -> 0` limits are extrapolated.
pub const LIMIT_LEVELS: [f64; 3] = [-0.08, -0.04, -0.02];
/// Shell half-widths of the limit estimates, as fractions of `|r|`.
pub const LIMIT_SHELLS: [f64; 3] = [0.8, 0.4, 0.2];
/// Shell half-widths used when the density is estimated instead of looked up.
pub const DENSITY_SHELLS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
/// Quadrature nodes whose weight is below this fraction of the total are
/// skipped; the skipped mass is reported.
pub const NEGLIGIBLE_NODE: f64 = 1e-4;
/// A sparse quadrature node may widen its `theta` bandwidth up to this factor.
pub const MAX_WIDENING: usize = 4;
/// Standard errors are floored here so that rounding noise between two exact
/// zeros does not register as a discrepancy.
pub const SE_FLOOR: f64 = 1e-12;
/// A boundary term known to be smaller than this is reported as zero.
const NEGLIGIBLE_BOUNDARY: f64 = 1e-6;

/// Stream numbers separating the batches of the different checks.
pub mod streams {
    pub const FLAT: u64 = 100;
    pub const HALF_LHS: u64 = 110;
    pub const HALF_RHS: u64 = 111;
    pub const JOINT_LHS: u64 = 120;
    pub const JOINT_RHS: u64 = 121;
    pub const LIMIT_LHS: u64 = 130;
    pub const LIMIT_RHS: u64 = 131;
    pub const NEUMANN_LHS: u64 = 140;
    pub const NEUMANN_RHS: u64 = 141;
    pub const NEUMANN_FLAT: u64 = 142;
}

pub mod flags {
    pub const DEGENERATE: &str = "degenerate";
    pub const BIASED: &str = "biased";
    pub const UNSTABLE_LIMIT: &str = "unstable-limit";
    pub const BOUNDARY_BOUNDED: &str = "boundary-bounded";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRef {
    pub tag: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbpReport {
    pub identity_tag: String,
    pub lhs: MCEstimate,
    pub rhs: MCEstimate,
    pub z_score: f64,
    pub pass: bool,
    pub params: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    pub oracle_refs: Vec<OracleRef>,
}

impl IbpReport {
    pub fn new(identity_tag: impl Into<String>, lhs: MCEstimate, rhs: MCEstimate, z_score: f64) -> Self {
        let pass = z_score <= PASS_Z && lhs.se.is_finite() && rhs.se.is_finite();
        Self {
            identity_tag: identity_tag.into(),
            lhs,
            rhs,
            z_score,
            pass,
            params: BTreeMap::new(),
            flags: Vec::new(),
            oracle_refs: Vec::new(),
        }
    }

    /// Report for two independent estimates.
    pub fn independent(identity_tag: impl Into<String>, lhs: MCEstimate, rhs: MCEstimate) -> Self {
        let z = z_floored(lhs.mean - rhs.mean, lhs.se.hypot(rhs.se));
        Self::new(identity_tag, lhs, rhs, z)
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn oracle(mut self, tag: &str, value: f64) -> Self {
        self.oracle_refs.push(OracleRef { tag: tag.to_string(), value });
        self
    }

    pub fn flag(&mut self, f: &str) {
        if !self.has_flag(f) {
            self.flags.push(f.to_string());
        }
    }

    pub fn has_flag(&self, f: &str) -> bool {
        self.flags.iter().any(|x| x == f)
    }
}

fn z_floored(diff: f64, se: f64) -> f64 {
    crate::mc::z_score(diff, se.max(SE_FLOOR))
}

/// Path count, grid, master seed and an optional kernel bandwidth in `g`
/// (`None` selects the halved Silverman rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub n_paths: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub bandwidth: Option<f64>,
}

impl VerifierConfig {
    pub fn new(n_paths: usize, grid: TimeGrid, seed: u64) -> Self {
        Self { n_paths, grid, seed, bandwidth: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1000 {
            return Err(GsurfError::Config(format!("n_paths must be >= 1000, got {}", self.n_paths)));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(GsurfError::Config(format!("bandwidth must be > 0, got {h}")));
            }
        }
        Ok(())
    }

    fn stream(&self, id: u64) -> Stream {
        Stream::new(self.seed, id)
    }
}

/// Three directions per process, given by their derivatives at cell
/// midpoints: `z = t, sin(pi t)/pi, t(1-t)`, and for the bridge (which needs
/// `z(1) = 0`) `z = sin(pi t)/pi, t(1-t), sin(2 pi t)/(2 pi)`.
pub fn standard_directions(kind: ProcessKind, grid: TimeGrid) -> Result<Vec<CameronMartinVector>> {
    use std::f64::consts::PI;
    let sine = CameronMartinVector::from_derivative(grid, |t| (PI * t).cos(), "sin(pi t)/pi")?;
    let parabola = CameronMartinVector::from_derivative(grid, |t| 1.0 - 2.0 * t, "t(1-t)")?;
    Ok(match kind {
        ProcessKind::Bridge => vec![
            sine,
            parabola,
            CameronMartinVector::from_derivative(grid, |t| (2.0 * PI * t).cos(), "sin(2 pi t)/(2 pi)")?,
        ],
        _ => vec![CameronMartinVector::from_derivative(grid, |_| 1.0, "t")?, sine, parabola],
    })
}

pub fn check_direction(process: &ProcessSpec, z: &CameronMartinVector, grid: TimeGrid) -> Result<()> {
    if z.n() != grid.n() {
        return Err(GsurfError::Grid(format!("direction has {} cells, grid has {}", z.n(), grid.n())));
    }
    if process.kind == ProcessKind::Bridge && z.end_value().abs() > BRIDGE_END_TOLERANCE {
        return Err(GsurfError::Domain(format!(
            "z(1) = {} is outside the bridge Cameron-Martin space",
            z.end_value()
        )));
    }
    Ok(())
}

pub fn require_pairing(process: &ProcessSpec) -> Result<()> {
    if process.kind == ProcessKind::Geometric {
        return Err(GsurfError::Unsupported("geometric paths have no Gaussian divergence".into()));
    }
    Ok(())
}

/// Per-column moments over a simulated batch, reduced in path order.
fn column_moments<F>(
    spec: &ProcessSpec,
    grid: TimeGrid,
    stream: Stream,
    n_paths: usize,
    width: usize,
    f: F,
) -> Result<Vec<Moments>>
where
    F: Fn(&PathSample, &mut [f64]) -> Result<()> + Sync,
{
    let spec = spec.validated()?;
    let chunks = par_chunks(n_paths, |range| -> Result<Vec<Moments>> {
        let mut buf = PathSample::buffer(spec, grid);
        let mut row = vec![0.0; width];
        let mut acc = vec![Moments::default(); width];
        for i in range {
            simulate_into(&spec, grid, stream.path_tag(i), &mut buf)?;
            f(&buf, &mut row)?;
            for (a, v) in acc.iter_mut().zip(&row) {
                a.push(*v);
            }
        }
        Ok(acc)
    });
    merge_columns(chunks, width)
}

/// As [`column_moments`] for a sampler indexed by path number.
fn column_moments_by_index<F>(n: usize, width: usize, f: F) -> Result<Vec<Moments>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let chunks = par_chunks(n, |range| -> Result<Vec<Moments>> {
        let mut row = vec![0.0; width];
        let mut acc = vec![Moments::default(); width];
        for i in range {
            f(i, &mut row)?;
            for (a, v) in acc.iter_mut().zip(&row) {
                a.push(*v);
            }
        }
        Ok(acc)
    });
    merge_columns(chunks, width)
}

fn merge_columns(chunks: Vec<Result<Vec<Moments>>>, width: usize) -> Result<Vec<Moments>> {
    let mut out = vec![Moments::default(); width];
    for c in chunks {
        for (o, m) in out.iter_mut().zip(c?) {
            o.merge(&m);
        }
    }
    Ok(out)
}

/// `(D phi . z, phi)` for every functional and direction on one path:
/// `out[k * m + j] = D phi_k . z_j`, followed by the `K` values.
fn derivatives(phis: &[CylindricalFunctional], zs: &[CameronMartinVector], grid: TimeGrid, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; phis.len() * zs.len()];
    let mut v = Vec::with_capacity(phis.len());
    for (k, phi) in phis.iter().enumerate() {
        let (val, grad) = phi.eval_with_grad(values);
        v.push(val);
        let idx = phi.indices(grid);
        for (j, z) in zs.iter().enumerate() {
            d[k * zs.len() + j] = idx.iter().zip(&grad).map(|(&i, g)| g * z.z_values[i]).sum();
        }
    }
    (d, v)
}

fn flat_tag(process: &ProcessSpec, phi: &str, z: &str) -> String {
    format!("flat/{}/{phi}/{z}", process.label())
}

/// `E[D phi . z] = E[phi W_z]` on common paths; the z-score uses the standard
/// error of the per-path difference.
pub fn ibp_flat(
    phi: &CylindricalFunctional,
    z: &CameronMartinVector,
    process: &ProcessSpec,
    cfg: &VerifierConfig,
) -> Result<IbpReport> {
    Ok(flat_suite(process, std::slice::from_ref(phi), std::slice::from_ref(z), cfg)?.remove(0))
}

/// [`ibp_flat`] for every pair of `phis` and `zs` on one batch.
pub fn flat_suite(
    process: &ProcessSpec,
    phis: &[CylindricalFunctional],
    zs: &[CameronMartinVector],
    cfg: &VerifierConfig,
) -> Result<Vec<IbpReport>> {
    cfg.validate()?;
    require_pairing(process)?;
    for z in zs {
        check_direction(process, z, cfg.grid)?;
    }
    let (nk, nz) = (phis.len(), zs.len());
    let stream = cfg.stream(streams::FLAT);
    let cols = column_moments(process, cfg.grid, stream, cfg.n_paths, 3 * nk * nz, |p, row| {
        let (d, v) = derivatives(phis, zs, cfg.grid, &p.values);
        for (j, z) in zs.iter().enumerate() {
            let w = cameron_martin_pairing(p, z)?;
            for k in 0..nk {
                let c = 3 * (k * nz + j);
                let lhs = d[k * nz + j];
                let rhs = v[k] * w;
                row[c] = lhs;
                row[c + 1] = rhs;
                row[c + 2] = lhs - rhs;
            }
        }
        Ok(())
    })?;
    let key = stream.key();
    let mut out = Vec::with_capacity(nk * nz);
    for (k, phi) in phis.iter().enumerate() {
        for (j, z) in zs.iter().enumerate() {
            let c = 3 * (k * nz + j);
            let (lhs, rhs, diff) = (cols[c].estimate(key), cols[c + 1].estimate(key), cols[c + 2]);
            let z_score = z_floored(diff.mean(), diff.se());
            out.push(IbpReport::new(flat_tag(process, &phi.label, &z.label), lhs, rhs, z_score).param("paired_se", diff.se()));
        }
    }
    Ok(out)
}

/// Product form `E[(D phi . z) psi + phi (D psi . z)] = E[phi psi W_z]` for
/// each pair and direction, paired on common paths.
pub fn product_suite(
    process: &ProcessSpec,
    pairs: &[(CylindricalFunctional, CylindricalFunctional)],
    zs: &[CameronMartinVector],
    cfg: &VerifierConfig,
) -> Result<Vec<IbpReport>> {
    cfg.validate()?;
    require_pairing(process)?;
    for z in zs {
        check_direction(process, z, cfg.grid)?;
    }
    let (np, nz) = (pairs.len(), zs.len());
    let stream = cfg.stream(streams::FLAT);
    let cols = column_moments(process, cfg.grid, stream, cfg.n_paths, 3 * np * nz, |p, row| {
        let w: Vec<f64> = zs.iter().map(|z| cameron_martin_pairing(p, z)).collect::<Result<_>>()?;
        for (k, (phi, psi)) in pairs.iter().enumerate() {
            let (dphi, vphi) = derivatives(std::slice::from_ref(phi), zs, cfg.grid, &p.values);
            let (dpsi, vpsi) = derivatives(std::slice::from_ref(psi), zs, cfg.grid, &p.values);
            for j in 0..nz {
                let c = 3 * (k * nz + j);
                let lhs = dphi[j] * vpsi[0] + vphi[0] * dpsi[j];
                let rhs = vphi[0] * vpsi[0] * w[j];
                row[c] = lhs;
                row[c + 1] = rhs;
                row[c + 2] = lhs - rhs;
            }
        }
        Ok(())
    })?;
    let key = stream.key();
    let mut out = Vec::with_capacity(np * nz);
    for (k, (phi, psi)) in pairs.iter().enumerate() {
        for (j, z) in zs.iter().enumerate() {
            let c = 3 * (k * nz + j);
            let diff = cols[c + 2];
            let tag = format!("product/{}/{}*{}/{}", process.label(), phi.label, psi.label, z.label);
            let z_score = z_floored(diff.mean(), diff.se());
            out.push(IbpReport::new(tag, cols[c].estimate(key), cols[c + 1].estimate(key), z_score).param("paired_se", diff.se()));
        }
    }
    Ok(out)
}

/// Source of `rho(r)` on the kernel side of the half-space identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensitySource {
    /// Closed-form density.
    Oracle,
    /// Richardson thin-shell estimate from the kernel-side batch.
    Estimated,
}

fn check_level(r: f64) -> Result<()> {
    if !(r < 0.0) {
        return Err(GsurfError::Precondition(format!("level r = {r} must be < 0")));
    }
    Ok(())
}

pub fn require_halfspace(process: &ProcessSpec) -> Result<()> {
    match process.kind {
        ProcessKind::Bm | ProcessKind::Bridge | ProcessKind::Distorted | ProcessKind::Ou => Ok(()),
        ProcessKind::Geometric => {
            Err(GsurfError::Unsupported("the half-space identity needs a Gaussian process".into()))
        }
    }
}

/// `-E[1{g >= r}(D phi . z - W_z phi)]` for every level, functional and
/// direction; index `(l * K + k) * M + j`.
fn halfspace_rhs(
    process: &ProcessSpec,
    phis: &[CylindricalFunctional],
    zs: &[CameronMartinVector],
    rs: &[f64],
    cfg: &VerifierConfig,
    stream: Stream,
) -> Result<Vec<MCEstimate>> {
    let (nk, nz) = (phis.len(), zs.len());
    let refine = default_refinement(process);
    let cols = column_moments(process, cfg.grid, stream, cfg.n_paths, rs.len() * nk * nz, |p, row| {
        let g = extremum_with(p, ExtremumKind::Min, refine)?.value;
        row.fill(0.0);
        if rs.iter().all(|r| g < *r) {
            return Ok(());
        }
        let (d, v) = derivatives(phis, zs, cfg.grid, &p.values);
        let w: Vec<f64> = zs.iter().map(|z| cameron_martin_pairing(p, z)).collect::<Result<_>>()?;
        for (l, r) in rs.iter().enumerate() {
            if g < *r {
                continue;
            }
            for k in 0..nk {
                for j in 0..nz {
                    row[(l * nk + k) * nz + j] = -(d[k * nz + j] - w[j] * v[k]);
                }
            }
        }
        Ok(())
    })?;
    Ok(cols.iter().map(|m| m.estimate(stream.key())).collect())
}

fn halfspace_tag(kind: &str, process: &ProcessSpec, phi: &str, z: &str, r: f64) -> String {
    format!("{kind}/{}/{phi}/{z}/r={r}", process.label())
}

/// `E[z(tau) phi | g = r] rho(r) = -E[1{g >= r}(D phi . z - W_z phi)]`.
pub fn ibp_halfspace(
    process: &ProcessSpec,
    phi: &CylindricalFunctional,
    z: &CameronMartinVector,
    r: f64,
    cfg: &VerifierConfig,
) -> Result<IbpReport> {
    let mut v = halfspace_suite(
        process,
        std::slice::from_ref(phi),
        std::slice::from_ref(z),
        &[r],
        DensitySource::Oracle,
        cfg,
    )?;
    Ok(v.remove(0))
}

/// Half-space checks for every level, functional and direction, from one
/// kernel-side batch and one independent expectation-side batch.
///
/// Each kernel estimate is repeated at half the bandwidth; a shift of more
/// than [`BANDWIDTH_SHIFT_Z`] combined standard errors sets the `biased` flag.
pub fn halfspace_suite(
    process: &ProcessSpec,
    phis: &[CylindricalFunctional],
    zs: &[CameronMartinVector],
    rs: &[f64],
    density: DensitySource,
    cfg: &VerifierConfig,
) -> Result<Vec<IbpReport>> {
    cfg.validate()?;
    require_halfspace(process)?;
    if rs.is_empty() {
        return Err(GsurfError::Config("level list is empty".into()));
    }
    for r in rs {
        check_level(*r)?;
    }
    for z in zs {
        check_direction(process, z, cfg.grid)?;
    }
    let lhs_stream = cfg.stream(streams::HALF_LHS);
    let a = sample_levels(process, cfg.grid, lhs_stream, cfg.n_paths, ExtremumKind::Min, phis)?;
    let rhs = halfspace_rhs(process, phis, zs, rs, cfg, cfg.stream(streams::HALF_RHS))?;
    let h = cfg.bandwidth.unwrap_or_else(|| silverman_bandwidth(&a.g));
    let (nk, nz) = (phis.len(), zs.len());
    let mut out = Vec::with_capacity(rs.len() * nk * nz);
    for (l, &r) in rs.iter().enumerate() {
        let rho = match density {
            DensitySource::Oracle => MCEstimate::exact(min_density(process, r)?),
            DensitySource::Estimated => {
                let eps: Vec<f64> = DENSITY_SHELLS.iter().copied().filter(|e| *e < r.abs()).collect();
                crate::surface_measure::density_from(&a.g, None, r, &eps, a.seed)?
            }
        };
        let full = kernel_terms(&a.g, r, h)?;
        let half = kernel_terms(&a.g, r, 0.5 * h)?;
        for (k, phi) in phis.iter().enumerate() {
            for (j, z) in zs.iter().enumerate() {
                let y = |i: usize| z.at(a.tau[i]) * a.phi[k][i];
                let e_full = BlockRatio::from_terms(a.len(), full.iter().map(|&(i, w)| (i, w, y(i)))).estimate(a.seed);
                let e_half = BlockRatio::from_terms(a.len(), half.iter().map(|&(i, w)| (i, w, y(i)))).estimate(a.seed);
                let lhs = times_density(e_full.estimate, rho);
                let rhs_e = rhs[(l * nk + k) * nz + j];
                let tag = halfspace_tag("halfspace", process, &phi.label, &z.label, r);
                let shift = e_full.estimate.z_score(&e_half.estimate);
                let mut rep = IbpReport::independent(tag, lhs, rhs_e)
                    .param("r", r)
                    .param("bandwidth", h)
                    .param("ess", e_full.ess)
                    .param("cond_exp", e_full.estimate.mean)
                    .param("cond_exp_half_bandwidth", e_half.estimate.mean)
                    .param("bandwidth_shift_z", shift)
                    .param("density", rho.mean);
                if density == DensitySource::Oracle {
                    rep = rep.oracle("min_density", rho.mean);
                } else {
                    rep = rep.param("density_se", rho.se);
                }
                if e_full.estimate.is_degenerate() {
                    rep.flag(flags::DEGENERATE);
                } else if !e_half.estimate.is_degenerate() && shift > BANDWIDTH_SHIFT_Z {
                    rep.flag(flags::BIASED);
                }
                out.push(rep);
            }
        }
    }
    Ok(out)
}

/// Product of a conditional expectation and a density with first-order
/// error propagation.
fn times_density(e: MCEstimate, rho: MCEstimate) -> MCEstimate {
    if e.is_degenerate() || rho.is_degenerate() {
        return MCEstimate::degenerate(e.n, e.seed);
    }
    let se = (rho.mean * e.se).hypot(e.mean * rho.se);
    MCEstimate::new(e.mean * rho.mean, se, e.n, e.seed)
}

pub fn require_joint(process: &ProcessSpec) -> Result<()> {
    match process.kind {
        ProcessKind::Bm | ProcessKind::Bridge | ProcessKind::Distorted => Ok(()),
        other => Err(GsurfError::Unsupported(format!("no closed-form joint density of (g, tau) for {other}"))),
    }
}

/// `int_0^1 E[phi | g = r, tau = s] z(s) pi(r, s) ds = -E[1{g >= r}(D phi . z - W_z phi)]`
/// with the `s`-integral on [`JOINT_NODES`] Chebyshev nodes.
pub fn ibp_joint(
    process: &ProcessSpec,
    phi: &CylindricalFunctional,
    z: &CameronMartinVector,
    r: f64,
    cfg: &VerifierConfig,
) -> Result<IbpReport> {
    Ok(joint_suite(process, std::slice::from_ref(phi), std::slice::from_ref(z), r, cfg)?.remove(0))
}

struct JointSide {
    batch: LevelSample,
    theta: Vec<f64>,
    h_g: f64,
    h_theta: f64,
}

impl JointSide {
    fn new(process: &ProcessSpec, phis: &[CylindricalFunctional], cfg: &VerifierConfig) -> Result<Self> {
        let stream = cfg.stream(streams::JOINT_LHS);
        let batch = sample_levels(process, cfg.grid, stream, cfg.n_paths, ExtremumKind::Min, phis)?;
        let theta: Vec<f64> = batch.tau.iter().map(|t| tau_coordinate(*t)).collect();
        let h_g = cfg.bandwidth.unwrap_or_else(|| silverman_bandwidth_2d(&batch.g));
        let h_theta = silverman_bandwidth_2d(&theta);
        Ok(Self { batch, theta, h_g, h_theta })
    }

    /// `sum_k c_k E[phi | g = r, tau = s_k]` with jackknife se; nodes with
    /// `c_k` negligible are skipped.
    fn quadrature(&self, phi: Option<&[f64]>, r: f64, coef: &[(f64, f64)]) -> Result<MCEstimate> {
        let total: f64 = coef.iter().map(|(_, c)| c.abs()).sum();
        let mut ratios = Vec::new();
        for &(s, c) in coef {
            if c.abs() <= NEGLIGIBLE_NODE * total {
                continue;
            }
            let mut b = nw2_blocks(&self.batch.g, &self.theta, phi, r, s, self.h_g, self.h_theta)?;
            let mut widen = 1;
            while b.is_degenerate() && widen < MAX_WIDENING {
                widen *= 2;
                b = nw2_blocks(&self.batch.g, &self.theta, phi, r, s, self.h_g, widen as f64 * self.h_theta)?;
            }
            if b.is_degenerate() {
                return Ok(MCEstimate::degenerate(self.batch.len(), self.batch.seed));
            }
            ratios.push((c, b));
        }
        let value: f64 = ratios.iter().map(|(c, b)| c * b.value()).sum();
        let se = jackknife_se(|blk| ratios.iter().map(|(c, b)| c * b.without(blk)).sum());
        Ok(MCEstimate::new(value, se, self.batch.len(), self.batch.seed))
    }
}

/// Sum of `|c_k|` over the nodes left out of the quadrature.
fn skipped_mass(coef: &[(f64, f64)]) -> f64 {
    let total: f64 = coef.iter().map(|(_, c)| c.abs()).sum();
    coef.iter().map(|(_, c)| c.abs()).filter(|c| *c <= NEGLIGIBLE_NODE * total).sum()
}

/// Quadrature coefficients `(s_k, w_k z(s_k) pi(r, s_k))`.
fn joint_coefficients(process: &ProcessSpec, z: &CameronMartinVector, r: f64) -> Result<Vec<(f64, f64)>> {
    chebyshev_nodes(JOINT_NODES)
        .into_iter()
        .map(|(s, w)| Ok((s, w * z.at(s) * min_joint_density(process, r, s)?)))
        .collect()
}

/// [`ibp_joint`] for every functional and direction at one level.
pub fn joint_suite(
    process: &ProcessSpec,
    phis: &[CylindricalFunctional],
    zs: &[CameronMartinVector],
    r: f64,
    cfg: &VerifierConfig,
) -> Result<Vec<IbpReport>> {
    cfg.validate()?;
    require_joint(process)?;
    check_level(r)?;
    for z in zs {
        check_direction(process, z, cfg.grid)?;
    }
    let side = JointSide::new(process, phis, cfg)?;
    let rhs = halfspace_rhs(process, phis, zs, &[r], cfg, cfg.stream(streams::JOINT_RHS))?;
    let nz = zs.len();
    let mut out = Vec::with_capacity(phis.len() * nz);
    for (j, z) in zs.iter().enumerate() {
        let coef = joint_coefficients(process, z, r)?;
        let marginal: f64 = coef.iter().map(|(_, c)| c).sum();
        let skipped = skipped_mass(&coef);
        for (k, phi) in phis.iter().enumerate() {
            let lhs = side.quadrature(Some(&side.batch.phi[k]), r, &coef)?;
            let tag = halfspace_tag("joint", process, &phi.label, &z.label, r);
            let mut rep = IbpReport::independent(tag, lhs, rhs[k * nz + j])
                .param("r", r)
                .param("bandwidth_g", side.h_g)
                .param("bandwidth_theta", side.h_theta)
                .param("skipped_node_mass", skipped)
                .oracle("joint_density_quadrature", marginal);
            if lhs.is_degenerate() {
                rep.flag(flags::DEGENERATE);
            }
            out.push(rep);
        }
    }
    Ok(out)
}

/// For `phi = 1` the joint side is the deterministic quadrature
/// `int z(s) pi(r, s) ds`; compares it with the kernel estimate
/// `E[z(tau) | g = r] rho(r)` of the half-space identity.
pub fn joint_marginal_consistency(
    process: &ProcessSpec,
    z: &CameronMartinVector,
    r: f64,
    cfg: &VerifierConfig,
) -> Result<IbpReport> {
    cfg.validate()?;
    require_joint(process)?;
    check_level(r)?;
    check_direction(process, z, cfg.grid)?;
    let side = JointSide::new(process, &[], cfg)?;
    let coef = joint_coefficients(process, z, r)?;
    let joint = side.quadrature(None, r, &coef)?;
    let a = &side.batch;
    let h = cfg.bandwidth.unwrap_or_else(|| silverman_bandwidth(&a.g));
    let terms = kernel_terms(&a.g, r, h)?;
    let e = BlockRatio::from_terms(a.len(), terms.iter().map(|&(i, w)| (i, w, z.at(a.tau[i])))).estimate(a.seed);
    let rho = min_density(process, r)?;
    let half = times_density(e.estimate, MCEstimate::exact(rho));
    let tag = halfspace_tag("joint-marginal", process, "1", &z.label, r);
    let mut rep = IbpReport::independent(tag, joint, half)
        .param("r", r)
        .oracle("min_density", rho)
        .oracle("joint_density_quadrature", coef.iter().map(|(_, c)| c).sum());
    if half.is_degenerate() {
        rep.flag(flags::DEGENERATE);
    }
    Ok(rep)
}

/// The three `r -> 0` limits of the half-space identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LimitKind {
    /// Brownian motion; limit law the Brownian meander.
    Meander,
    /// `b t + sigma B`; limit law a tilted, scaled meander.
    Tilted { b: f64, sigma: f64 },
    /// Brownian bridge; limit law the 3-d Bessel bridge.
    Bessel,
}

impl LimitKind {
    pub fn process(&self) -> Result<ProcessSpec> {
        match *self {
            LimitKind::Meander => Ok(ProcessSpec::bm()),
            LimitKind::Tilted { b, sigma } => ProcessSpec::distorted(b, sigma),
            LimitKind::Bessel => Ok(ProcessSpec::bridge()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            LimitKind::Meander => "meander".into(),
            LimitKind::Tilted { b, sigma } => format!("tilted(b={b},sigma={sigma})"),
            LimitKind::Bessel => "bessel".into(),
        }
    }

    /// Limit of `pi(r, s) / P(g >= r)`.
    pub fn weight(&self, s: f64) -> Result<f64> {
        match self {
            LimitKind::Meander => Ok(meander_weight(s)),
            LimitKind::Bessel => Ok(bessel_weight(s)),
            LimitKind::Tilted { .. } => limit_constants(&self.process()?)?.tilde_pi(s),
        }
    }
}

/// Limit identity `int E_nu[phi | tau = s] w(s) z(s) ds = -E_nu[D phi . z - W_z phi]`.
///
/// The left side is `E[phi z(tau) delta(g - r)] / P(g >= r)` at each level of
/// [`LIMIT_LEVELS`] (Richardson thin shells over `|r| *` [`LIMIT_SHELLS`]),
/// extrapolated linearly to `r = 0`. The right side uses the exact meander or
/// Bessel-bridge sampler; the tilted law reweights meander paths by
/// `exp(b m(1) / sigma)` and scales them by `sigma`.
pub fn limit_identity(
    kind: LimitKind,
    phi: &CylindricalFunctional,
    z: &CameronMartinVector,
    cfg: &VerifierConfig,
) -> Result<IbpReport> {
    Ok(limit_suite(kind, std::slice::from_ref(phi), std::slice::from_ref(z), cfg)?.remove(0))
}

/// [`limit_identity`] for every functional and direction on one pair of
/// batches.
pub fn limit_suite(
    kind: LimitKind,
    phis: &[CylindricalFunctional],
    zs: &[CameronMartinVector],
    cfg: &VerifierConfig,
) -> Result<Vec<IbpReport>> {
    cfg.validate()?;
    let process = kind.process()?;
    for z in zs {
        check_direction(&process, z, cfg.grid)?;
    }
    if let LimitKind::Tilted { b, sigma } = kind {
        if (b / sigma).abs() > MAX_TILT {
            return Err(GsurfError::NumericRange(format!("tilt b/sigma = {} is too large", b / sigma)));
        }
    }
    let grid = cfg.grid;
    let (lin, quad) = extrapolation_weights(&LIMIT_LEVELS);
    let norms: Vec<f64> = LIMIT_LEVELS.iter().map(|r| survival(&process, *r)).collect::<Result<_>>()?;
    let shells: Vec<Vec<f64>> = LIMIT_LEVELS.iter().map(|r| LIMIT_SHELLS.iter().map(|f| f * r.abs()).collect()).collect();
    let rw = richardson_weights(&LIMIT_SHELLS);
    let nl = LIMIT_LEVELS.len();
    let (nk, nz) = (phis.len(), zs.len());
    // per pair: level estimates, linear intercept, quadratic minus linear;
    // then smallest-shell hits per level
    let width = nl + 2;
    let hits = nk * nz * width;
    let lhs_stream = cfg.stream(streams::LIMIT_LHS);
    let refine = default_refinement(&process);
    let cols = column_moments(&process, grid, lhs_stream, cfg.n_paths, hits + nl, |p, row| {
        row.fill(0.0);
        let rec = extremum_with(p, ExtremumKind::Min, refine)?;
        let near = LIMIT_LEVELS.iter().zip(&shells).any(|(r, e)| (rec.value - r).abs() <= e[0]);
        if !near {
            return Ok(());
        }
        let terms: Vec<f64> = (0..nl)
            .map(|l| richardson_term(rec.value, LIMIT_LEVELS[l], &shells[l], &rw) / norms[l])
            .collect();
        for l in 0..nl {
            let e = &shells[l];
            row[hits + l] = ((rec.value - LIMIT_LEVELS[l]).abs() <= e[e.len() - 1]) as u8 as f64;
        }
        for (k, phi) in phis.iter().enumerate() {
            let v = phi.eval(&p.values);
            for (j, z) in zs.iter().enumerate() {
                let y = v * z.at(rec.tau);
                let c = (k * nz + j) * width;
                for l in 0..nl {
                    let level = y * terms[l];
                    row[c + l] = level;
                    row[c + nl] += lin[l] * level;
                    row[c + nl + 1] += (quad[l] - lin[l]) * level;
                }
            }
        }
        Ok(())
    })?;
    let key = lhs_stream.key();
    let degenerate = (0..nl).any(|l| cols[hits + l].mean() == 0.0);
    let rhs = limit_rhs(kind, phis, zs, cfg)?;
    let mut out = Vec::with_capacity(nk * nz);
    for (k, phi) in phis.iter().enumerate() {
        for (j, z) in zs.iter().enumerate() {
            let c = (k * nz + j) * width;
            let lhs = if degenerate { MCEstimate::degenerate(cfg.n_paths, key) } else { cols[c + nl].estimate(key) };
            let curvature = cols[c + nl + 1];
            let tag = format!("limit/{}/{}/{}", kind.label(), phi.label, z.label);
            let mut rep = IbpReport::independent(tag, lhs, rhs[k * nz + j])
                .param("curvature", curvature.mean())
                .param("curvature_se", curvature.se());
            for (l, r) in LIMIT_LEVELS.iter().enumerate() {
                rep = rep
                    .param(&format!("level_estimate(r={r})"), cols[c + l].mean())
                    .param(&format!("level_se(r={r})"), cols[c + l].se())
                    .oracle(&format!("survival(r={r})"), norms[l]);
            }
            if phi.is_constant() {
                let integral = integrate_unit(|s| z.at(s) * kind.weight(s).unwrap_or(f64::NAN), 1e-10, 1e-10)?;
                rep = rep.oracle("limit_weight_integral", phi.eval_at(&[]) * integral);
            }
            if degenerate {
                rep.flag(flags::DEGENERATE);
            }
            if z_floored(curvature.mean(), curvature.se()) > PASS_Z {
                rep.flag(flags::UNSTABLE_LIMIT);
            }
            out.push(rep);
        }
    }
    Ok(out)
}

/// `-E_nu[D phi . z - W_z phi]` on exact samples of the limit law, for every
/// functional and direction; index `k * M + j`.
fn limit_rhs(
    kind: LimitKind,
    phis: &[CylindricalFunctional],
    zs: &[CameronMartinVector],
    cfg: &VerifierConfig,
) -> Result<Vec<MCEstimate>> {
    let grid = cfg.grid;
    let stream = cfg.stream(streams::LIMIT_RHS);
    let (nk, nz) = (phis.len(), zs.len());
    let terms = |x: &[f64], w: &[f64], row: &mut [f64]| {
        let (d, v) = derivatives(phis, zs, grid, x);
        for k in 0..nk {
            for j in 0..nz {
                row[k * nz + j] = -(d[k * nz + j] - w[j] * v[k]);
            }
        }
    };
    match kind {
        LimitKind::Meander | LimitKind::Bessel => {
            let cols = column_moments_by_index(cfg.n_paths, nk * nz, |i, row| {
                let tag = stream.path_tag(i);
                let p = if kind == LimitKind::Meander { sample_meander(grid, tag) } else { sample_bessel3_bridge(grid, tag) };
                let w: Vec<f64> = zs.iter().map(|z| stieltjes_pairing(&p.values, z)).collect();
                terms(&p.values, &w, row);
                Ok(())
            })?;
            Ok(cols.iter().map(|m| m.estimate(stream.key())).collect())
        }
        LimitKind::Tilted { b, sigma } => {
            let theta = b / sigma;
            let rows = crate::mc::map_indices(cfg.n_paths, |i| {
                let m = sample_meander(grid, stream.path_tag(i));
                let x: Vec<f64> = m.values.iter().map(|v| sigma * v).collect();
                let w: Vec<f64> =
                    zs.iter().map(|z| (stieltjes_pairing(&x, z) - b * z.end_value()) / (sigma * sigma)).collect();
                let mut row = vec![0.0; nk * nz];
                terms(&x, &w, &mut row);
                let weight = girsanov_weight(theta, m.values[grid.n()]);
                if !weight.is_finite() {
                    return Err(GsurfError::NumericRange("tilt weight overflow".into()));
                }
                Ok((row, weight))
            })?;
            let weights: Vec<f64> = rows.iter().map(|(_, w)| *w).collect();
            Ok((0..nk * nz)
                .map(|c| {
                    let v: Vec<f64> = rows.iter().map(|(r, _)| r[c]).collect();
                    weighted_mean(&v, &weights, stream.key())
                })
                .collect())
        }
    }
}

/// `cos(sum_k a_k x_k + c)` in the coordinates `x_k = <x, e_k>` of the
/// covariance eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigCylindrical {
    pub a: Vec<f64>,
    pub c: f64,
}

impl TrigCylindrical {
    pub fn new(a: Vec<f64>, c: f64) -> Self {
        Self { a, c }
    }

    pub fn one() -> Self {
        Self { a: vec![], c: 0.0 }
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn arg(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.c
    }

    pub fn label(&self) -> String {
        let terms: Vec<String> = self.a.iter().enumerate().map(|(k, a)| format!("{a}x{}", k + 1)).collect();
        format!("cos({}+{})", terms.join("+"), self.c)
    }

    fn coef(&self, k: usize) -> f64 {
        self.a.get(k).copied().unwrap_or(0.0)
    }
}

/// Test pairs `(phi, psi)` of truncation order `k`: `(cos(sum a_j x_j), 1)` and
/// `(cos(sum a_j x_j + 0.4), cos(sum b_j x_j + 0.2))` with `a_j = (-1)^{j+1} 0.8 / j`
/// and `b_j = 0.6 / j`.
pub fn trig_suite(k: usize) -> Result<Vec<(TrigCylindrical, TrigCylindrical)>> {
    if k == 0 || k > MAX_EIGENPAIRS {
        return Err(GsurfError::Config(format!("truncation K = {k} must lie in 1..={MAX_EIGENPAIRS}")));
    }
    let a: Vec<f64> = (1..=k).map(|j| if j % 2 == 1 { 0.8 } else { -0.8 } / j as f64).collect();
    let b: Vec<f64> = (1..=k).map(|j| 0.6 / j as f64).collect();
    Ok(vec![
        (TrigCylindrical::new(a.clone(), 0.0), TrigCylindrical::one()),
        (TrigCylindrical::new(a, 0.4), TrigCylindrical::new(b, 0.2)),
    ])
}

/// Interior terms of the Neumann identity on one path with eigen-coordinates
/// `x`: `(L phi psi, <D phi, D psi>)`.
fn neumann_interior(phi: &TrigCylindrical, psi: &TrigCylindrical, x: &[f64], lambdas: &[f64]) -> (f64, f64) {
    let (pa, qa) = (phi.arg(x), psi.arg(x));
    let a2: f64 = phi.a.iter().map(|a| a * a).sum();
    let drift: f64 = phi.a.iter().zip(x).zip(lambdas).map(|((a, x), l)| a * x / l).sum();
    let l_phi = -0.5 * pa.cos() * a2 + 0.5 * pa.sin() * drift;
    let ab: f64 = (0..x.len()).map(|k| phi.coef(k) * psi.coef(k)).sum();
    (l_phi * qa.cos(), pa.sin() * qa.sin() * ab)
}

fn neumann_order(phi: &TrigCylindrical, psi: &TrigCylindrical) -> Result<usize> {
    let k = phi.k().max(psi.k()).max(1);
    if k > MAX_EIGENPAIRS {
        return Err(GsurfError::Config(format!("truncation K = {k} exceeds the {MAX_EIGENPAIRS} available eigenpairs")));
    }
    Ok(k)
}

/// `E[1{g >= r} L phi psi] = -1/2 E[1{g >= r} <D phi, D psi>] - 1/2 E[<Dg, D phi> psi | g = r] rho(r)`
/// for Brownian motion, with `<Dg, D phi> = sum_k e_k(tau) D_k phi`.
///
/// The two interior terms are estimated jointly on one batch, so the check
/// compares `lhs = E[1{g >= r}(L phi psi + <D phi, D psi> / 2)]` with the
/// boundary term on an independent batch. Each term is also reported.
pub fn neumann_identity(phi: &TrigCylindrical, psi: &TrigCylindrical, r: f64, cfg: &VerifierConfig) -> Result<IbpReport> {
    cfg.validate()?;
    check_level(r)?;
    let k = neumann_order(phi, psi)?;
    let spec = ProcessSpec::bm();
    let grid = cfg.grid;
    let eig = eigenpairs(&spec, k, grid)?;
    let refine = default_refinement(&spec);
    let a_stream = cfg.stream(streams::NEUMANN_LHS);
    let interior = column_moments(&spec, grid, a_stream, cfg.n_paths, 3, |p, row| {
        let g = extremum_with(p, ExtremumKind::Min, refine)?.value;
        if g < r {
            row.fill(0.0);
            return Ok(());
        }
        let x = eig.project(&p.values);
        let (lpp, dd) = neumann_interior(phi, psi, &x, &eig.lambdas);
        row[0] = lpp + 0.5 * dd;
        row[1] = lpp;
        row[2] = -0.5 * dd;
        Ok(())
    })?;
    let lhs = interior[0].estimate(a_stream.key());

    let b_stream = cfg.stream(streams::NEUMANN_RHS);
    let rows = crate::mc::map_paths(&spec, grid, b_stream, cfg.n_paths, |p| {
        let rec = extremum_with(p, ExtremumKind::Min, refine)?;
        let x = eig.project(&p.values);
        let et: f64 = (0..k).map(|j| phi.coef(j) * eig.mode_at(j, rec.tau)).sum();
        Ok((rec.value, -phi.arg(&x).sin() * et * psi.arg(&x).cos()))
    })?;
    let (g, y): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let h = cfg.bandwidth.unwrap_or_else(|| silverman_bandwidth(&g));
    let terms = kernel_terms(&g, r, h)?;
    let ratio = BlockRatio::from_terms(g.len(), terms.iter().map(|&(i, w)| (i, w, y[i])));
    let rho = min_density(&spec, r)?;
    let bound = 0.5 * rho * SQRT_2 * phi.a.iter().map(|a| a.abs()).sum::<f64>();
    let mut flag = None;
    let rhs = if phi.a.iter().all(|a| *a == 0.0) {
        MCEstimate::exact(0.0)
    } else if ratio.is_degenerate() && bound < NEGLIGIBLE_BOUNDARY {
        flag = Some(flags::BOUNDARY_BOUNDED);
        MCEstimate::new(0.0, bound, g.len(), b_stream.key())
    } else {
        ratio.estimate(b_stream.key()).estimate.scaled(-0.5 * rho)
    };
    let tag = format!("neumann/bm/{}/{}/K={k}/r={r}", phi.label(), psi.label());
    let mut rep = IbpReport::independent(tag, lhs, rhs)
        .param("r", r)
        .param("K", k as f64)
        .param("bandwidth", h)
        .param("interior_l_phi_psi", interior[1].mean())
        .param("interior_l_phi_psi_se", interior[1].se())
        .param("interior_dirichlet", interior[2].mean())
        .param("interior_dirichlet_se", interior[2].se())
        .param("boundary", rhs.mean)
        .param("boundary_se", rhs.se)
        .param("ess", ratio.ess())
        .oracle("min_density", rho);
    if let Some(f) = flag {
        rep.flag(f);
    } else if rhs.is_degenerate() {
        rep.flag(flags::DEGENERATE);
    }
    Ok(rep)
}

/// Whole-space form `E[L phi psi] = -1/2 E[<D phi, D psi>]`, paired on one
/// Brownian batch independent of those of [`neumann_identity`].
pub fn neumann_flat(phi: &TrigCylindrical, psi: &TrigCylindrical, cfg: &VerifierConfig) -> Result<IbpReport> {
    cfg.validate()?;
    let k = neumann_order(phi, psi)?;
    let spec = ProcessSpec::bm();
    let eig = eigenpairs(&spec, k, cfg.grid)?;
    let stream = cfg.stream(streams::NEUMANN_FLAT);
    let cols = column_moments(&spec, cfg.grid, stream, cfg.n_paths, 3, |p, row| {
        let x = eig.project(&p.values);
        let (lpp, dd) = neumann_interior(phi, psi, &x, &eig.lambdas);
        row[0] = lpp;
        row[1] = -0.5 * dd;
        row[2] = lpp + 0.5 * dd;
        Ok(())
    })?;
    let key = stream.key();
    let z_score = z_floored(cols[2].mean(), cols[2].se());
    let tag = format!("neumann-flat/bm/{}/{}/K={k}", phi.label(), psi.label());
    Ok(IbpReport::new(tag, cols[0].estimate(key), cols[1].estimate(key), z_score).param("paired_se", cols[2].se()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, paths: usize) -> VerifierConfig {
        VerifierConfig::new(paths, TimeGrid::new(n).unwrap(), 11)
    }

    #[test]
    fn report_pass_rule() {
        let a = MCEstimate::new(1.0, 0.1, 10, 0);
        let b = MCEstimate::new(1.2, 0.0, 10, 0);
        assert!(IbpReport::independent("t", a, b).pass);
        let c = MCEstimate::new(1.5, 0.0, 10, 0);
        assert!(!IbpReport::independent("t", a, c).pass);
        assert!(!IbpReport::independent("t", MCEstimate::degenerate(1, 0), b).pass);
    }

    #[test]
    fn extrapolation_weights_are_exact_on_polynomials() {
        let (lin, quad) = extrapolation_weights(&LIMIT_LEVELS);
        let f1 = |r: f64| 2.0 - 3.0 * r;
        let f2 = |r: f64| 2.0 - 3.0 * r + 5.0 * r * r;
        let at = |w: &[f64], f: &dyn Fn(f64) -> f64| w.iter().zip(LIMIT_LEVELS).map(|(w, r)| w * f(r)).sum::<f64>();
        assert!((at(&lin, &f1) - 2.0).abs() < 1e-12);
        assert!((at(&quad, &f2) - 2.0).abs() < 1e-12);
        assert!((lin[0] + 0.5).abs() < 1e-12 && (lin[1] - 0.5).abs() < 1e-12 && (lin[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn directions_respect_bridge_space() {
        let g = TimeGrid::new(200).unwrap();
        for z in standard_directions(ProcessKind::Bridge, g).unwrap() {
            assert!(z.end_value().abs() < BRIDGE_END_TOLERANCE, "{}", z.label);
        }
        let bm = standard_directions(ProcessKind::Bm, g).unwrap();
        assert!((bm[0].end_value() - 1.0).abs() < 1e-12);
        assert!(check_direction(&ProcessSpec::bridge(), &bm[0], g).is_err());
    }

    #[test]
    fn trivial_cases_balance_exactly() {
        let c = cfg(64, 2000);
        let g = c.grid;
        let zero = CameronMartinVector::zero(g);
        let phi = CylindricalFunctional::cos_at(0.5).unwrap();
        let rep = ibp_flat(&phi, &zero, &ProcessSpec::bm(), &c).unwrap();
        assert_eq!((rep.lhs.mean, rep.rhs.mean), (0.0, 0.0));
        assert!(rep.pass);
        let h = ibp_halfspace(&ProcessSpec::bm(), &phi, &zero, -1.0, &c).unwrap();
        assert_eq!((h.lhs.mean, h.rhs.mean), (0.0, 0.0));
        let j = ibp_joint(&ProcessSpec::bm(), &phi, &zero, -1.0, &c).unwrap();
        assert_eq!((j.lhs.mean, j.rhs.mean), (0.0, 0.0));
        let n = neumann_identity(&TrigCylindrical::one(), &TrigCylindrical::new(vec![1.0], 0.3), -1.0, &c).unwrap();
        assert_eq!((n.lhs.mean, n.rhs.mean), (0.0, 0.0));
        let l = limit_identity(LimitKind::Meander, &phi, &zero, &c).unwrap();
        assert_eq!((l.lhs.mean, l.rhs.mean), (0.0, 0.0));
    }

    #[test]
    fn guards() {
        let c = cfg(64, 2000);
        let one = CylindricalFunctional::constant(1.0);
        let z = standard_directions(ProcessKind::Bm, c.grid).unwrap().remove(0);
        assert!(matches!(ibp_halfspace(&ProcessSpec::bm(), &one, &z, 0.0, &c), Err(GsurfError::Precondition(_))));
        assert!(matches!(ibp_joint(&ProcessSpec::ou(1.0).unwrap(), &one, &z, -1.0, &c), Err(GsurfError::Unsupported(_))));
        assert!(matches!(ibp_flat(&one, &z, &ProcessSpec::bridge(), &c), Err(GsurfError::Domain(_))));
        assert!(matches!(limit_identity(LimitKind::Bessel, &one, &z, &c), Err(GsurfError::Domain(_))));
        let big = TrigCylindrical::new(vec![0.1; MAX_EIGENPAIRS + 1], 0.0);
        assert!(matches!(neumann_identity(&big, &TrigCylindrical::one(), -1.0, &c), Err(GsurfError::Config(_))));
        assert!(matches!(
            ibp_flat(&one, &z, &ProcessSpec::geometric(0.0, 1.0).unwrap(), &c),
            Err(GsurfError::Unsupported(_))
        ));
        assert!(matches!(ibp_flat(&one, &z, &ProcessSpec::bm(), &cfg(64, 10)), Err(GsurfError::Config(_))));
    }

    #[test]
    fn neumann_interior_matches_one_dimensional_generator() {
        // phi = cos(a x + c) in one coordinate with variance lambda:
        // L phi = phi''/2 - x phi' / (2 lambda)
        let (a, c, lam, x) = (0.7, 0.2, 0.4, 1.3);
        let phi = TrigCylindrical::new(vec![a], c);
        let (lpp, dd) = neumann_interior(&phi, &TrigCylindrical::one(), &[x], &[lam]);
        let f = |u: f64| (a * u + c).cos();
        let e = 1e-4;
        let d1 = (f(x + e) - f(x - e)) / (2.0 * e);
        let d2 = (f(x + e) - 2.0 * f(x) + f(x - e)) / (e * e);
        assert!((lpp - (0.5 * d2 - 0.5 * x * d1 / lam)).abs() < 1e-6);
        assert_eq!(dd, 0.0);
    }

    #[test]
    fn flat_identity_small_batch() {
        let c = cfg(128, 20_000);
        let x1 = CylindricalFunctional::coordinate(1.0).unwrap();
        let z = standard_directions(ProcessKind::Bm, c.grid).unwrap().remove(0);
        let rep = ibp_flat(&x1, &z, &ProcessSpec::bm(), &c).unwrap();
        assert!((rep.lhs.mean - 1.0).abs() < 1e-12);
        assert!(rep.z_score < 4.0, "{rep:?}");
    }

    #[test]
    fn reports_are_reproducible() {
        let c = cfg(64, 3000);
        let phi = CylindricalFunctional::cos_at(0.5).unwrap();
        let z = standard_directions(ProcessKind::Bm, c.grid).unwrap().remove(1);
        let a = ibp_halfspace(&ProcessSpec::bm(), &phi, &z, -0.5, &c).unwrap();
        let b = ibp_halfspace(&ProcessSpec::bm(), &phi, &z, -0.5, &c).unwrap();
        assert_eq!(a, b);
    }
}
