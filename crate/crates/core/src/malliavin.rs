//! Discrete Malliavin calculus on the driving increments.
//!
//! A kernel `k` lives on grid cells; its pairing with a direction `h` is
//! `<k, h> = sum_j k_j h_j / n`, the derivative of a functional when every
//! driving increment moves by `h_j / n`. Adapted integrands are evaluated at
//! the left end of each cell, which makes the Itô sum `sum v_j dB_j` the exact
//! adjoint of this derivative on the grid.

use serde::{Deserialize, Serialize};

use crate::error::{GsurfError, Result};
use crate::path_engine::{running_arg_extremum, ExtremumKind, ExtremumRecord, PathSample, ProcessKind, ProcessSpec};

/// Paths with `gamma` below this value are excluded from `M*(u / gamma)`.
pub const GAMMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinKernel {
    pub values: Vec<f64>,
}

impl MalliavinKernel {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    /// `<k, h>` in `L^2(0, 1)`.
    pub fn pair(&self, h: &[f64]) -> f64 {
        l2_dot(&self.values, h)
    }

    /// `int_0^1 k`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Cell inner product `sum a_j b_j / n`.
pub fn l2_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Fraction of cell `j` lying in `[0, tau]`.
fn cell_fraction(j: usize, n: usize, tau: f64) -> f64 {
    (tau * n as f64 - j as f64).clamp(0.0, 1.0)
}

/// Kernel of `Mg` for the extremum recorded in `record`, by the chain rule on
/// the path's construction from its driving increments.
pub fn malliavin_kernel_of_extremum(spec: &ProcessSpec, path: &PathSample, record: &ExtremumRecord) -> MalliavinKernel {
    let n = path.grid.n();
    let tau = record.tau;
    let ind = (0..n).map(|j| cell_fraction(j, n, tau));
    let values = match spec.kind {
        ProcessKind::Bm => ind.collect(),
        ProcessKind::Distorted => ind.map(|f| spec.sigma * f).collect(),
        ProcessKind::Geometric => ind.map(|f| spec.sigma * record.value * f).collect(),
        ProcessKind::Bridge => ind.map(|f| f - tau).collect(),
        ProcessKind::Ou => {
            let (_, kappa) = spec.ou_coefficients(n);
            (0..n)
                .map(|j| {
                    let f = cell_fraction(j, n, tau);
                    let lag = (tau - path.grid.node(j + 1)).max(0.0);
                    kappa * (-spec.a * lag).exp() * f
                })
                .collect()
        }
    };
    MalliavinKernel { values }
}

/// Quintic smoothstep cutoff: 1 on `(-inf, a/2]`, 0 on `[a, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub a: f64,
}

impl CutoffSpec {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(GsurfError::Parameter(format!("cutoff threshold must be > 0, got {a}")));
        }
        Ok(Self { a })
    }
}

/// `(psi(r), psi'(r))`.
pub fn cutoff_psi(spec: &CutoffSpec, r: f64) -> Result<(f64, f64)> {
    if !(spec.a > 0.0) {
        return Err(GsurfError::Parameter(format!("cutoff threshold must be > 0, got {}", spec.a)));
    }
    if !r.is_finite() {
        return Err(GsurfError::Numeric("cutoff evaluated at a non-finite level".into()));
    }
    Ok(psi_unchecked(spec.a, r))
}

#[inline]
fn psi_unchecked(a: f64, r: f64) -> (f64, f64) {
    let half = 0.5 * a;
    let x = (r - half) / half;
    if x <= 0.0 {
        (1.0, 0.0)
    } else if x >= 1.0 {
        (0.0, 0.0)
    } else {
        let x2 = x * x;
        let s = x2 * x * (10.0 - 15.0 * x + 6.0 * x2);
        let ds = 30.0 * x2 * (1.0 - 2.0 * x + x2);
        (1.0 - s, -ds / half)
    }
}

/// What the cutoff is applied to in the distorted case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffArgument {
    /// `psi(S(t))`, the running maximum.
    #[default]
    RunningMax,
    /// `psi(X(t))`, the process itself.
    Process,
}

/// The pair `(u, gamma)` for `g = max X` together with what is needed for
/// `M gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisFields {
    /// `u_j = psi(S(t_j))` on cell `j`.
    pub u: Vec<f64>,
    pub gamma: f64,
    /// Kernel of `M gamma`.
    pub m_gamma: MalliavinKernel,
    /// Grid argmax of the path.
    pub argmax: usize,
    pub max_value: f64,
}

/// Builds `(u, gamma)` for the maximum of a bm, distorted or geometric path.
pub fn hypothesis_fields(spec: &ProcessSpec, path: &PathSample, cutoff: &CutoffSpec) -> Result<HypothesisFields> {
    hypothesis_fields_with(spec, path, cutoff, CutoffArgument::RunningMax)
}

pub fn hypothesis_fields_with(
    spec: &ProcessSpec,
    path: &PathSample,
    cutoff: &CutoffSpec,
    argument: CutoffArgument,
) -> Result<HypothesisFields> {
    let cutoff = CutoffSpec::new(cutoff.a)?;
    match spec.kind {
        ProcessKind::Bm | ProcessKind::Distorted | ProcessKind::Geometric => {}
        other => {
            return Err(GsurfError::Unsupported(format!(
                "no cutoff construction of (u, gamma) is available for {other}"
            )))
        }
    }
    let n = path.grid.n();
    let x = &path.values;
    let arg = running_arg_extremum(x, ExtremumKind::Max);
    let argmax = arg[n];
    let max_value = x[argmax];
    let a = cutoff.a;
    let level = |j: usize| match argument {
        CutoffArgument::RunningMax => x[arg[j]],
        CutoffArgument::Process => x[j],
    };
    let mut u = Vec::with_capacity(n);
    let mut dpsi = Vec::with_capacity(n);
    for j in 0..n {
        let (p, dp) = psi_unchecked(a, level(j));
        u.push(p);
        dpsi.push(dp);
    }
    let integral = u.iter().sum::<f64>() / n as f64;
    // dX(t_i)/d dB_k = sigma_eff(i) 1{k < i}
    let dx = |i: usize| match spec.kind {
        ProcessKind::Bm => 1.0,
        ProcessKind::Distorted => spec.sigma,
        _ => spec.sigma * x[i],
    };
    let source = |j: usize| match argument {
        CutoffArgument::RunningMax => arg[j],
        CutoffArgument::Process => j,
    };
    // M(int psi)_k = (1/n) sum_j psi'(S_j) dX(i_j) 1{k < i_j}, with i_j the
    // node carrying S_j; accumulated backwards over the cutoff index.
    let mut bucket = vec![0.0; n + 1];
    for (j, d) in dpsi.iter().enumerate().take(n) {
        let i = source(j);
        bucket[i] += d * dx(i) / n as f64;
    }
    let mut m_int = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        acc += bucket[k + 1];
        m_int[k] = acc;
    }
    let (gamma, m_gamma) = match spec.kind {
        ProcessKind::Bm => (integral, m_int),
        ProcessKind::Distorted => (spec.sigma * integral, m_int.iter().map(|v| spec.sigma * v).collect()),
        _ => {
            // gamma = sigma S_X(1) int psi; product rule.
            let end = max_value;
            let m_end: Vec<f64> = (0..n).map(|k| if k < argmax { spec.sigma * end } else { 0.0 }).collect();
            let mg = (0..n).map(|k| spec.sigma * (m_end[k] * integral + end * m_int[k])).collect();
            (spec.sigma * end * integral, mg)
        }
    };
    Ok(HypothesisFields { u, gamma, m_gamma: MalliavinKernel { values: m_gamma }, argmax, max_value })
}

/// `<Mg, u> - gamma` for `g = max X`, which vanishes on `{g > a}`.
pub fn verify_local_identity(spec: &ProcessSpec, path: &PathSample, cutoff: &CutoffSpec) -> Result<f64> {
    verify_local_identity_with(spec, path, cutoff, CutoffArgument::RunningMax)
}

pub fn verify_local_identity_with(
    spec: &ProcessSpec,
    path: &PathSample,
    cutoff: &CutoffSpec,
    argument: CutoffArgument,
) -> Result<f64> {
    let fields = hypothesis_fields_with(spec, path, cutoff, argument)?;
    if !(fields.max_value > cutoff.a) {
        return Err(GsurfError::Precondition(format!(
            "max {} is not above the cutoff level {}",
            fields.max_value, cutoff.a
        )));
    }
    let record = ExtremumRecord {
        value: fields.max_value,
        tau: path.grid.node(fields.argmax),
        grid_index: fields.argmax,
        refined: false,
        tie_count: 1,
    };
    let mg = malliavin_kernel_of_extremum(spec, path, &record);
    Ok(mg.pair(&fields.u) - fields.gamma)
}

/// Itô sum `sum_j v_j dB_j` of an adapted cell vector.
pub fn skorokhod_adapted(v: &[f64], path: &PathSample) -> f64 {
    v.iter().zip(&path.driving).map(|(a, b)| a * b).sum()
}

/// `M*(F v) = F M*(v) - <MF, v>` for adapted `v`.
pub fn skorokhod_product(f: f64, mf: &MalliavinKernel, v: &[f64], path: &PathSample) -> f64 {
    f * skorokhod_adapted(v, path) - mf.pair(v)
}

/// `M*(phi u / gamma)` assembled from the fields, with `<M phi, u>` supplied by
/// the caller. Fails with a singularity error when `gamma` is below the floor.
pub fn skorokhod_u_over_gamma(fields: &HypothesisFields, path: &PathSample, phi: f64, m_phi_u: f64) -> Result<f64> {
    let g = fields.gamma;
    if !(g >= GAMMA_FLOOR) {
        return Err(GsurfError::Singularity(format!("gamma = {g} below {GAMMA_FLOOR}")));
    }
    let ito = skorokhod_adapted(&fields.u, path);
    let mgu = fields.m_gamma.pair(&fields.u);
    Ok(phi * (ito / g + mgu / (g * g)) - m_phi_u / g)
}

/// Kernel of `M phi` for a cylindrical `phi` on a Brownian path: entry `j`
/// is `sum_i d_i f 1{j < idx_i}`, scaled by `sigma` for the distorted process.
pub fn cylindrical_kernel(grad: &[f64], indices: &[usize], n: usize, scale: f64) -> MalliavinKernel {
    let mut bucket = vec![0.0; n + 1];
    for (d, &i) in grad.iter().zip(indices) {
        bucket[i] += d * scale;
    }
    let mut values = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        acc += bucket[k + 1];
        values[k] = acc;
    }
    MalliavinKernel { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::{extremum, finite_diff_driving, from_driving, simulate, TimeGrid};

    fn rec(tau: f64) -> ExtremumRecord {
        ExtremumRecord { value: 0.0, tau, grid_index: 0, refined: false, tie_count: 1 }
    }

    #[test]
    fn kernel_examples() {
        let g = TimeGrid::new(4).unwrap();
        let p = from_driving(&ProcessSpec::bm(), g, vec![0.0; 4], 0).unwrap();
        let k = malliavin_kernel_of_extremum(&ProcessSpec::bm(), &p, &rec(0.5));
        assert_eq!(k.values, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(k.integral(), 0.5);
        let b = malliavin_kernel_of_extremum(&ProcessSpec::bridge(), &p, &rec(0.5));
        assert_eq!(b.values, vec![0.5, 0.5, -0.5, -0.5]);
    }

    #[test]
    fn kernels_match_finite_differences() {
        let g = TimeGrid::new(200).unwrap();
        let h: Vec<f64> = (0..200).map(|j| (3.0 * g.cell_mid(j)).cos() + 0.5).collect();
        let specs = [
            ProcessSpec::bm(),
            ProcessSpec::distorted(0.8, 1.3).unwrap(),
            ProcessSpec::geometric(0.2, 0.7).unwrap(),
            ProcessSpec::bridge(),
            ProcessSpec::ou(1.5).unwrap(),
        ];
        for spec in specs {
            let mut checked = 0;
            for tag in 0..40 {
                let path = simulate(&spec, g, tag).unwrap();
                for kind in [ExtremumKind::Min, ExtremumKind::Max] {
                    let r = extremum(&path, kind, false).unwrap();
                    // skip paths whose runner-up node is within reach of the step
                    let mut sorted = path.values.clone();
                    sorted.sort_by(f64::total_cmp);
                    let gap = match kind {
                        ExtremumKind::Min => sorted[1] - sorted[0],
                        ExtremumKind::Max => sorted[200] - sorted[199],
                    };
                    if gap < 1e-4 || r.grid_index == 0 {
                        continue;
                    }
                    let k = malliavin_kernel_of_extremum(&spec, &path, &r);
                    let fd = finite_diff_driving(
                        |p| extremum(p, kind, false).unwrap().value,
                        &path,
                        &h,
                        1e-6,
                    )
                    .unwrap();
                    assert!((fd - k.pair(&h)).abs() < 1e-5, "{spec:?} {kind:?}: {fd} vs {}", k.pair(&h));
                    checked += 1;
                }
            }
            assert!(checked > 30);
        }
    }

    #[test]
    fn cutoff_profile() {
        let c = CutoffSpec::new(1.0).unwrap();
        assert_eq!(cutoff_psi(&c, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(cutoff_psi(&c, 1.0).unwrap(), (0.0, 0.0));
        assert!((cutoff_psi(&c, 0.75).unwrap().0 - 0.5).abs() < 1e-15);
        assert_eq!(cutoff_psi(&c, 0.5).unwrap().1, 0.0);
        assert!(cutoff_psi(&c, 1.0 - 1e-9).unwrap().1.abs() < 1e-12);
        assert!(matches!(cutoff_psi(&CutoffSpec { a: 0.0 }, 0.1), Err(GsurfError::Parameter(_))));
        // derivative consistency and monotonicity
        let mut prev = 1.0;
        for i in 1..100 {
            let r = 0.5 + i as f64 / 200.0;
            let (p, dp) = cutoff_psi(&c, r).unwrap();
            let fd = (cutoff_psi(&c, r + 1e-7).unwrap().0 - cutoff_psi(&c, r - 1e-7).unwrap().0) / 2e-7;
            assert!((fd - dp).abs() < 1e-6);
            assert!(p <= prev);
            prev = p;
        }
    }

    #[test]
    fn local_identity_exact() {
        let g = TimeGrid::new(500).unwrap();
        let c = CutoffSpec::new(1.0).unwrap();
        let specs = [
            ProcessSpec::bm(),
            ProcessSpec::distorted(0.3, 1.4).unwrap(),
            ProcessSpec::geometric(0.5, 0.9).unwrap(),
        ];
        for spec in specs {
            let mut hits = 0;
            for tag in 0..300 {
                let path = simulate(&spec, g, tag).unwrap();
                match verify_local_identity(&spec, &path, &c) {
                    Ok(res) => {
                        assert!(res.abs() <= 1e-10, "{spec:?}: {res}");
                        hits += 1;
                    }
                    Err(GsurfError::Precondition(_)) => {}
                    Err(e) => panic!("{e}"),
                }
            }
            assert!(hits > 10);
        }
        let ou = simulate(&ProcessSpec::ou(1.0).unwrap(), g, 0).unwrap();
        assert!(matches!(
            hypothesis_fields(&ProcessSpec::ou(1.0).unwrap(), &ou, &c),
            Err(GsurfError::Unsupported(_))
        ));
    }

    #[test]
    fn local_identity_needs_running_max() {
        // psi applied to the process instead of its running max leaves mass
        // after the argmax whenever the path dips back under a.
        let g = TimeGrid::new(500).unwrap();
        let c = CutoffSpec::new(1.0).unwrap();
        let spec = ProcessSpec::bm();
        let mut broken = 0;
        for tag in 0..300 {
            let path = simulate(&spec, g, tag).unwrap();
            if let Ok(res) = verify_local_identity_with(&spec, &path, &c, CutoffArgument::Process) {
                if res.abs() > 1e-6 {
                    broken += 1;
                }
            }
        }
        assert!(broken > 0);
    }

    #[test]
    fn crossing_example() {
        // Piecewise-linear path: crosses 1/2 at 0.3, 1 at 0.6, peaks at 0.9.
        let g = TimeGrid::new(10).unwrap();
        let v = [0.0, 0.2, 0.35, 0.5, 0.7, 0.85, 1.0, 1.2, 1.4, 1.6, 1.3];
        let driving = v.windows(2).map(|w| w[1] - w[0]).collect();
        let path = from_driving(&ProcessSpec::bm(), g, driving, 0).unwrap();
        let c = CutoffSpec::new(1.0).unwrap();
        let f = hypothesis_fields(&ProcessSpec::bm(), &path, &c).unwrap();
        assert_eq!(f.argmax, 9);
        assert!(f.u[6..].iter().all(|u| *u == 0.0));
        assert_eq!(verify_local_identity(&ProcessSpec::bm(), &path, &c).unwrap(), 0.0);
    }

    #[test]
    fn m_gamma_matches_finite_differences() {
        let g = TimeGrid::new(100).unwrap();
        let c = CutoffSpec::new(0.6).unwrap();
        let h: Vec<f64> = (0..100).map(|j| 1.0 - g.cell_mid(j)).collect();
        for spec in [ProcessSpec::bm(), ProcessSpec::distorted(0.2, 1.2).unwrap(), ProcessSpec::geometric(0.1, 0.5).unwrap()] {
            for tag in 0..20 {
                let path = simulate(&spec, g, tag).unwrap();
                let f = hypothesis_fields(&spec, &path, &c).unwrap();
                let fd = finite_diff_driving(|p| hypothesis_fields(&spec, p, &c).unwrap().gamma, &path, &h, 1e-7).unwrap();
                assert!((fd - f.m_gamma.pair(&h)).abs() < 1e-5, "{spec:?}: {fd} vs {}", f.m_gamma.pair(&h));
            }
        }
    }

    #[test]
    fn skorokhod_trivia() {
        let g = TimeGrid::new(50).unwrap();
        let path = simulate(&ProcessSpec::bm(), g, 1).unwrap();
        assert!((skorokhod_adapted(&[1.0; 50], &path) - path.values[50]).abs() < 1e-12);
        assert_eq!(skorokhod_adapted(&[0.0; 50], &path), 0.0);
        let v: Vec<f64> = (0..50).map(|j| path.values[j].sin()).collect();
        let zero = MalliavinKernel::zeros(50);
        assert_eq!(skorokhod_product(1.0, &zero, &v, &path), skorokhod_adapted(&v, &path));
        assert_eq!(skorokhod_product(3.0, &zero, &[0.0; 50], &path), 0.0);
    }

    #[test]
    fn cylindrical_kernel_matches_fd() {
        let g = TimeGrid::new(40).unwrap();
        let path = simulate(&ProcessSpec::bm(), g, 2).unwrap();
        let idx = [10usize, 40];
        let f = |p: &PathSample| p.values[10].sin() + p.values[40] * p.values[10];
        let grad = [path.values[10].cos() + path.values[40], path.values[10]];
        let k = cylindrical_kernel(&grad, &idx, 40, 1.0);
        let h: Vec<f64> = (0..40).map(|j| (j as f64).sqrt()).collect();
        let fd = finite_diff_driving(f, &path, &h, 1e-6).unwrap();
        assert!((fd - k.pair(&h)).abs() < 1e-7);
    }
}
