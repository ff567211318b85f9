//! The experiments behind each subcommand. Each returns its identity reports
//! and, for level or shell sweeps, the rows of the sweep table.

use gsurf_core::density_oracles::{ks_statistic, min_density, min_joint_density, survival};
use gsurf_core::functional::CylindricalFunctional;
use gsurf_core::ibp_verifier::{
    flags, flat_suite, halfspace_suite, joint_marginal_consistency, joint_suite, limit_suite, neumann_flat,
    neumann_identity, product_suite, standard_directions, trig_suite, IbpReport, OracleRef, VerifierConfig,
    LIMIT_LEVELS,
};
use gsurf_core::malliavin::CutoffSpec;
use gsurf_core::mc::{MCEstimate, Stream};
use gsurf_core::path_engine::{ExtremumKind, ProcessKind, ProcessSpec};
use gsurf_core::quadrature::{integrate, integrate_unit};
use gsurf_core::surface_measure::{
    density_from, lemma21_check, nw_from, sample_levels, shell_from, silverman_bandwidth, MIN_EFFECTIVE_SAMPLES,
};
use serde::Serialize;

use crate::config::{limit_kind, Experiment, ExperimentConfig};
use crate::error::Result;
use crate::oracle::{flat_closed_side, product_closed_side};

/// Stream numbers of the harness's own batches.
pub mod streams {
    pub const DENSITY: u64 = 10;
    pub const SHELL_A: u64 = 11;
    pub const SHELL_B: u64 = 12;
    pub const MOMENTS: u64 = 13;
}

/// Oracle tag of the brute-force Gaussian quadrature of the closed side.
pub const GAUSSIAN_ORACLE: &str = "gaussian_quadrature";

/// One row of the sweep table; `eps = 0` marks the extrapolated value and an
/// empty `eps` a level of the limit sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub experiment: String,
    pub process: String,
    pub r: f64,
    pub eps: Option<f64>,
    pub estimate: f64,
    pub se: f64,
    pub oracle: Option<f64>,
    pub z_score: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub results: Vec<IbpReport>,
    pub sweep: Vec<SweepRow>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::DensityCheck => density_check(cfg),
        Experiment::ShellConvergence => shell_convergence(cfg),
        Experiment::IbpFlat => ibp_flat(cfg),
        Experiment::IbpHalfspace => ibp_halfspace(cfg),
        Experiment::IbpJoint => ibp_joint(cfg),
        Experiment::Limit => limit(cfg),
        Experiment::Neumann => neumann(cfg),
        Experiment::Lemma21 => lemma21(cfg),
        Experiment::Moments => moments(cfg),
    }
}

fn verifier(cfg: &ExperimentConfig) -> Result<VerifierConfig> {
    let mut v = VerifierConfig::new(cfg.n_paths, cfg.time_grid()?, cfg.seed);
    v.bandwidth = cfg.bandwidth;
    Ok(v)
}

fn row(cfg: &ExperimentConfig, r: f64, eps: Option<f64>, est: MCEstimate, oracle: Option<f64>) -> SweepRow {
    let z = oracle.map(|o| gsurf_core::mc::z_score(est.mean - o, est.se));
    SweepRow {
        experiment: cfg.experiment.as_str().into(),
        process: cfg.process.label(),
        r,
        eps,
        estimate: est.mean,
        se: est.se,
        oracle,
        z_score: z,
        pass: z.map(|z| z <= gsurf_core::ibp_verifier::PASS_Z),
    }
}

/// Level below which the minimum density is negligible.
fn lower_limit(p: &ProcessSpec) -> f64 {
    let scale = match p.kind {
        ProcessKind::Distorted => p.sigma + p.b.abs(),
        ProcessKind::Ou => ((2.0 * p.a).exp_m1() / (2.0 * p.a)).sqrt(),
        _ => 1.0,
    };
    -40.0 * scale
}

/// `int r^power rho(r) dr` over the support of the minimum.
fn density_moment(p: &ProcessSpec, power: i32) -> Result<f64> {
    let f = |x: f64| x.powi(power) * min_density(p, x).unwrap_or(f64::NAN);
    Ok(integrate(f, lower_limit(p), 0.0, 1e-13, 1e-12)?)
}

fn shell_rows(cfg: &ExperimentConfig, g: &[f64], r: f64, extrapolated: MCEstimate, seed: u64) -> Result<Vec<SweepRow>> {
    let oracle = min_density(&cfg.process, r)?;
    let mut rows = Vec::with_capacity(cfg.eps.len() + 1);
    for &e in &cfg.eps {
        rows.push(row(cfg, r, Some(e), shell_from(g, None, r, e, seed)?, Some(oracle)));
    }
    rows.push(row(cfg, r, Some(0.0), extrapolated, Some(oracle)));
    Ok(rows)
}

/// Richardson-extrapolated density of the minimum against its closed form at
/// each level; the report also carries the KS distance of the whole sample.
fn density_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.process;
    let s = sample_levels(&p, cfg.time_grid()?, Stream::new(cfg.seed, streams::DENSITY), cfg.n_paths, ExtremumKind::Min, &[])?;
    let ks = ks_statistic(&s.g, &p)?;
    let mass = density_moment(&p, 0)?;
    let mut out = Outcome::default();
    for &r in &cfg.r {
        let oracle = min_density(&p, r)?;
        let est = density_from(&s.g, None, r, &cfg.eps, s.seed)?;
        let mut rep = IbpReport::independent(format!("density/{}/r={r}", p.label()), est, MCEstimate::exact(oracle))
            .param("r", r)
            .param("ks_statistic", ks)
            .oracle("min_density", oracle)
            .oracle("min_density_mass", mass);
        if est.is_degenerate() {
            rep.flag(flags::DEGENERATE);
        }
        out.results.push(rep);
        out.sweep.extend(shell_rows(cfg, &s.g, r, est, s.seed)?);
    }
    Ok(out)
}

/// Thin-shell density of `phi` against `E[phi | g = r] rho(r)` from a
/// kernel regression on an independent batch, for the standard functionals.
fn shell_convergence(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.process;
    let grid = cfg.time_grid()?;
    let phis = CylindricalFunctional::standard_suite();
    let a = sample_levels(&p, grid, Stream::new(cfg.seed, streams::SHELL_A), cfg.n_paths, ExtremumKind::Min, &phis)?;
    let b = sample_levels(&p, grid, Stream::new(cfg.seed, streams::SHELL_B), cfg.n_paths, ExtremumKind::Min, &phis)?;
    let h = cfg.bandwidth.unwrap_or_else(|| silverman_bandwidth(&b.g));
    let mut out = Outcome::default();
    for &r in &cfg.r {
        let rho = min_density(&p, r)?;
        for (k, phi) in phis.iter().enumerate() {
            let lhs = density_from(&a.g, Some(&a.phi[k]), r, &cfg.eps, a.seed)?;
            let ce = nw_from(&b.g, Some(&b.phi[k]), r, h, b.seed)?;
            let rhs = ce.estimate.scaled(rho);
            let tag = format!("factorization/{}/{}/r={r}", p.label(), phi.label);
            let mut rep = IbpReport::independent(tag, lhs, rhs)
                .param("r", r)
                .param("bandwidth", h)
                .param("ess", ce.ess)
                .param("cond_exp", ce.estimate.mean)
                .oracle("min_density", rho);
            if lhs.is_degenerate() || ce.ess < MIN_EFFECTIVE_SAMPLES {
                rep.flag(flags::DEGENERATE);
                rep.pass = false;
            }
            if k == 0 {
                out.sweep.extend(shell_rows(cfg, &a.g, r, lhs, a.seed)?);
            }
            out.results.push(rep);
        }
    }
    Ok(out)
}

/// First two moments of the minimum against quadrature of its density.
fn moments(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.process;
    let s = sample_levels(&p, cfg.time_grid()?, Stream::new(cfg.seed, streams::MOMENTS), cfg.n_paths, ExtremumKind::Min, &[])?;
    let mut out = Outcome::default();
    for power in 1..=2 {
        let xs: Vec<f64> = s.g.iter().map(|g| g.powi(power)).collect();
        let est = MCEstimate::from_samples(&xs, s.seed);
        let exact = density_moment(&p, power)?;
        let tag = format!("moment/{}/E[g^{power}]", p.label());
        out.results.push(IbpReport::independent(tag, est, MCEstimate::exact(exact)).oracle("density_moment", exact));
    }
    Ok(out)
}

/// Pairs for the product identity, chosen so each reads at most two times.
fn product_pairs() -> Vec<(CylindricalFunctional, CylindricalFunctional)> {
    let s = CylindricalFunctional::standard_suite();
    vec![(s[1].clone(), s[3].clone()), (s[1].clone(), s[2].clone()), (s[2].clone(), s[3].clone())]
}

fn gaussian_oracle_available(p: &ProcessSpec) -> bool {
    matches!(p.kind, ProcessKind::Bm | ProcessKind::Bridge)
}

fn ibp_flat(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.process;
    let v = verifier(cfg)?;
    let grid = v.grid;
    let phis = CylindricalFunctional::standard_suite();
    let zs = standard_directions(p.kind, grid)?;
    let mut results = flat_suite(&p, &phis, &zs, &v)?;
    let pairs = product_pairs();
    let mut products = product_suite(&p, &pairs, &zs, &v)?;
    if gaussian_oracle_available(&p) {
        let nz = zs.len();
        for (i, rep) in results.iter_mut().enumerate() {
            let o = flat_closed_side(&p, grid, &phis[i / nz], &zs[i % nz])?;
            rep.oracle_refs.push(OracleRef { tag: GAUSSIAN_ORACLE.into(), value: o });
        }
        for (i, rep) in products.iter_mut().enumerate() {
            let (phi, psi) = &pairs[i / nz];
            let o = product_closed_side(&p, grid, phi, psi, &zs[i % nz])?;
            rep.oracle_refs.push(OracleRef { tag: GAUSSIAN_ORACLE.into(), value: o });
        }
    }
    results.extend(products);
    Ok(Outcome { results, sweep: Vec::new() })
}

fn ibp_halfspace(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.process;
    let v = verifier(cfg)?;
    let phis = CylindricalFunctional::standard_suite();
    let zs = standard_directions(p.kind, v.grid)?;
    let results = if cfg.joint {
        let mut all = Vec::new();
        for &r in &cfg.r {
            all.extend(joint_suite(&p, &phis, &zs, r, &v)?);
        }
        all
    } else {
        halfspace_suite(&p, &phis, &zs, &cfg.r, cfg.density, &v)?
    };
    Ok(Outcome { results, sweep: Vec::new() })
}

fn ibp_joint(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.process;
    let v = verifier(cfg)?;
    let phis = CylindricalFunctional::standard_suite();
    let zs = standard_directions(p.kind, v.grid)?;
    let mut results = Vec::new();
    for &r in &cfg.r {
        results.extend(joint_suite(&p, &phis, &zs, r, &v)?);
        for z in &zs {
            results.push(joint_marginal_consistency(&p, z, r, &v)?);
        }
    }
    Ok(Outcome { results, sweep: Vec::new() })
}

/// `int z(s) pi(r, s) ds / P(g >= r)`, the level-`r` value of the limit
/// identity's left side for `phi = 1`.
pub fn limit_level_oracle(p: &ProcessSpec, z: &gsurf_core::spectral_ops::CameronMartinVector, r: f64) -> Result<f64> {
    let num = integrate_unit(|s| z.at(s) * min_joint_density(p, r, s).unwrap_or(f64::NAN), 1e-13, 1e-10)?;
    Ok(num / survival(p, r)?)
}

/// Limit identities over the standard suite; the sweep lists the level
/// estimates and the extrapolation for `phi = 1` and each direction.
fn limit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.process;
    let kind = limit_kind(&p)?;
    let v = verifier(cfg)?;
    let phis = CylindricalFunctional::standard_suite();
    let zs = standard_directions(p.kind, v.grid)?;
    let mut results = limit_suite(kind, &phis, &zs, &v)?;
    let mut sweep = Vec::new();
    for (j, z) in zs.iter().enumerate() {
        // phi = 1 comes first in the suite
        let rep = &mut results[j];
        for &r in &LIMIT_LEVELS {
            let oracle = limit_level_oracle(&p, z, r)?;
            let est = MCEstimate::new(
                rep.params[&format!("level_estimate(r={r})")],
                rep.params[&format!("level_se(r={r})")],
                cfg.n_paths,
                rep.lhs.seed,
            );
            sweep.push(row(cfg, r, None, est, Some(oracle)));
            rep.oracle_refs.push(OracleRef { tag: format!("limit_ratio(r={r})"), value: oracle });
        }
        let limit_oracle = rep.oracle_refs.iter().find(|o| o.tag == "limit_weight_integral").map(|o| o.value);
        sweep.push(row(cfg, 0.0, Some(0.0), rep.lhs, limit_oracle));
    }
    Ok(Outcome { results, sweep })
}

fn neumann(cfg: &ExperimentConfig) -> Result<Outcome> {
    let v = verifier(cfg)?;
    let pairs = trig_suite(cfg.k)?;
    let mut results = Vec::new();
    for &r in &cfg.r {
        for (phi, psi) in &pairs {
            results.push(neumann_identity(phi, psi, r, &v)?);
        }
    }
    for (phi, psi) in &pairs {
        results.push(neumann_flat(phi, psi, &v)?);
    }
    Ok(Outcome { results, sweep: Vec::new() })
}

fn lemma21(cfg: &ExperimentConfig) -> Result<Outcome> {
    let grid = cfg.time_grid()?;
    let cutoff = CutoffSpec::new(cfg.cutoff)?;
    let phis = [CylindricalFunctional::constant(1.0), CylindricalFunctional::cos_at(0.5)?];
    let mut results = Vec::new();
    for &r in &cfg.r {
        for phi in &phis {
            let rep = lemma21_check(phi, &cutoff, r, cfg.n_paths, grid, cfg.seed)?;
            let tag = format!("lemma21/{}/a={}/r={r}", phi.label, cutoff.a);
            let mut out = IbpReport::new(tag, rep.lhs, rep.rhs, rep.z_score.abs())
                .param("r", r)
                .param("cutoff", cutoff.a)
                .param("excluded_paths", rep.excluded as f64);
            if rep.lhs.is_degenerate() {
                out.flag(flags::DEGENERATE);
            }
            results.push(out);
        }
    }
    Ok(Outcome { results, sweep: Vec::new() })
}
