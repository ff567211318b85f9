//! Cameron–Martin directions, the covariance eigensystems of Brownian motion
//! and the Brownian bridge, and the white-noise pairing `W_z`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{GsurfError, Result};
use crate::path_engine::{PathSample, ProcessKind, ProcessSpec, TimeGrid};
use crate::quadrature::trapezoid_dot;

/// Largest `|z(1)|` still treated as a bridge Cameron–Martin direction.
pub const BRIDGE_END_TOLERANCE: f64 = 1e-9;

/// A direction `z(t) = int_0^t h`, stored by its cell derivative `h` and its
/// node values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameronMartinVector {
    /// Derivative on cells, `h_j` on `[t_j, t_{j+1})`.
    pub h: Vec<f64>,
    /// `z(t_i) = sum_{j < i} h_j / n`.
    pub z_values: Vec<f64>,
    pub label: String,
    /// Optional coordinates in an eigenbasis.
    pub coefficients: Option<Vec<f64>>,
}

impl CameronMartinVector {
    pub fn from_h(h: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if h.len() < 2 {
            return Err(GsurfError::Grid("direction needs at least 2 cells".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(GsurfError::Numeric("direction has non-finite derivative".into()));
        }
        let n = h.len() as f64;
        let mut z_values = Vec::with_capacity(h.len() + 1);
        let mut acc = 0.0;
        z_values.push(0.0);
        for v in &h {
            acc += v / n;
            z_values.push(acc);
        }
        Ok(Self { h, z_values, label: label.into(), coefficients: None })
    }

    /// Samples the derivative `h` at cell midpoints.
    pub fn from_derivative<F: Fn(f64) -> f64>(grid: TimeGrid, h: F, label: impl Into<String>) -> Result<Self> {
        let cells = (0..grid.n()).map(|j| h(grid.cell_mid(j))).collect();
        Self::from_h(cells, label)
    }

    /// Takes node values (with `z(0) = 0`) and differences them into `h`.
    pub fn from_z_values(z: &[f64], label: impl Into<String>) -> Result<Self> {
        if z.first().copied() != Some(0.0) {
            return Err(GsurfError::Domain("direction must vanish at t = 0".into()));
        }
        let n = (z.len() - 1) as f64;
        let h = z.windows(2).map(|w| (w[1] - w[0]) * n).collect();
        let mut out = Self::from_h(h, label)?;
        out.z_values = z.to_vec();
        Ok(out)
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            h: vec![0.0; grid.n()],
            z_values: vec![0.0; grid.n() + 1],
            label: "0".into(),
            coefficients: None,
        }
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn end_value(&self) -> f64 {
        *self.z_values.last().expect("non-empty")
    }

    /// `z(t)` by linear interpolation between nodes (exact for the
    /// piecewise-linear direction this represents).
    pub fn at(&self, t: f64) -> f64 {
        let n = self.n();
        let x = (t.clamp(0.0, 1.0)) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let frac = x - i as f64;
        self.z_values[i] + frac * (self.z_values[i + 1] - self.z_values[i])
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            h: self.h.iter().map(|v| v * c).collect(),
            z_values: self.z_values.iter().map(|v| v * c).collect(),
            label: format!("{c}*{}", self.label),
            coefficients: self.coefficients.as_ref().map(|c0| c0.iter().map(|v| v * c).collect()),
        }
    }
}

/// Truncated eigensystem `Q e_k = lambda_k e_k` with modes stored on nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub kind: ProcessKind,
    pub grid: TimeGrid,
    pub lambdas: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
}

impl EigenSystem {
    pub fn k(&self) -> usize {
        self.lambdas.len()
    }

    /// Mode `k` (zero-based) evaluated at `t`.
    pub fn mode_at(&self, k: usize, t: f64) -> f64 {
        mode_value(self.kind, k, t)
    }

    /// Trapezoid coordinates `<x, e_k>` of a node vector.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        self.modes.iter().map(|e| trapezoid_dot(values, e)).collect()
    }

    /// `Q e_k` as a Cameron–Martin direction.
    pub fn q_mode(&self, k: usize) -> Result<CameronMartinVector> {
        let z: Vec<f64> = self.modes[k].iter().map(|e| self.lambdas[k] * e).collect();
        let mut v = CameronMartinVector::from_z_values(&z, format!("Qe{}", k + 1))?;
        let mut c = vec![0.0; self.k()];
        c[k] = self.lambdas[k];
        v.coefficients = Some(c);
        Ok(v)
    }
}

fn frequency(kind: ProcessKind, k: usize) -> f64 {
    match kind {
        ProcessKind::Bm => (k as f64 + 0.5) * PI,
        _ => (k as f64 + 1.0) * PI,
    }
}

fn mode_value(kind: ProcessKind, k: usize, t: f64) -> f64 {
    SQRT_2 * (frequency(kind, k) * t).sin()
}

/// Closed-form eigenpairs of the Brownian motion (`min(s, t)`) and Brownian
/// bridge (`min(s, t) - s t`) covariances.
pub fn eigenpairs(spec: &ProcessSpec, k: usize, grid: TimeGrid) -> Result<EigenSystem> {
    match spec.kind {
        ProcessKind::Bm | ProcessKind::Bridge => {}
        other => {
            return Err(GsurfError::Unsupported(format!("no closed-form eigensystem for {other}")));
        }
    }
    if k == 0 {
        return Err(GsurfError::Parameter("truncation order must be >= 1".into()));
    }
    let lambdas = (0..k).map(|j| frequency(spec.kind, j).powi(-2)).collect();
    let modes = (0..k)
        .map(|j| (0..=grid.n()).map(|i| mode_value(spec.kind, j, grid.node(i))).collect())
        .collect();
    Ok(EigenSystem { kind: spec.kind, grid, lambdas, modes })
}

/// Itô sum `sum_i h_i * driving_i` of the direction's derivative against the
/// driving increments.
pub fn white_noise_pairing(path: &PathSample, z: &CameronMartinVector) -> Result<f64> {
    check_grid(path, z)?;
    if path.process.kind == ProcessKind::Bridge && z.end_value().abs() > BRIDGE_END_TOLERANCE {
        return Err(GsurfError::Domain(format!(
            "z(1) = {} is outside the bridge Cameron-Martin space",
            z.end_value()
        )));
    }
    Ok(z.h.iter().zip(&path.driving).map(|(h, d)| h * d).sum())
}

/// Truncated spectral form `sum_k x_k z_k / lambda_k`.
pub fn spectral_pairing(path: &PathSample, z: &CameronMartinVector, eig: &EigenSystem) -> Result<f64> {
    check_grid(path, z)?;
    let x = eig.project(&path.values);
    let zc = eig.project(&z.z_values);
    let out: f64 = x.iter().zip(&zc).zip(&eig.lambdas).map(|((x, z), l)| x * z / l).sum();
    if out.is_finite() {
        Ok(out)
    } else {
        Err(GsurfError::Numeric("spectral pairing is not finite".into()))
    }
}

/// Gaussian divergence of the direction `z` taken in the space of the
/// process values: minus the derivative of the log-likelihood of the path
/// when its node values are shifted by `delta * z`.
///
/// Brownian motion and bridge use the Itô sum; the distorted process divides
/// by `sigma`; OU pulls `z` back through its exact one-step transition. The
/// geometric process is not linear in its driving noise and is rejected.
pub fn cameron_martin_pairing(path: &PathSample, z: &CameronMartinVector) -> Result<f64> {
    check_grid(path, z)?;
    match path.process.kind {
        ProcessKind::Bm | ProcessKind::Bridge => white_noise_pairing(path, z),
        ProcessKind::Distorted => Ok(white_noise_pairing(path, z)? / path.process.sigma),
        ProcessKind::Ou => {
            let n = path.grid.n();
            let (decay, kappa) = path.process.ou_coefficients(n);
            let scale = n as f64 / kappa;
            let zv = &z.z_values;
            Ok((0..n).map(|i| (zv[i + 1] - decay * zv[i]) * scale * path.driving[i]).sum())
        }
        ProcessKind::Geometric => Err(GsurfError::Unsupported(
            "geometric paths are not a linear image of the driving noise".into(),
        )),
    }
}

/// Pathwise Stieltjes sum `sum_i h_i (x_{i+1} - x_i)`; the pairing for laws
/// given only by their paths (meander, Bessel bridge).
pub fn stieltjes_pairing(values: &[f64], z: &CameronMartinVector) -> f64 {
    z.h.iter().zip(values.windows(2)).map(|(h, w)| h * (w[1] - w[0])).sum()
}

fn check_grid(path: &PathSample, z: &CameronMartinVector) -> Result<()> {
    if z.n() != path.grid.n() {
        return Err(GsurfError::Grid(format!(
            "direction has {} cells, path has {}",
            z.n(),
            path.grid.n()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::{from_driving, simulate};

    #[test]
    fn prefix_sum_invariant() {
        let g = TimeGrid::new(8).unwrap();
        let z = CameronMartinVector::from_derivative(g, |_| 1.0, "t").unwrap();
        assert_eq!(z.z_values[0], 0.0);
        for i in 0..=8 {
            assert!((z.z_values[i] - g.node(i)).abs() < 1e-15);
        }
        assert!((z.at(0.3) - 0.3).abs() < 1e-15);
        let back = CameronMartinVector::from_z_values(&z.z_values, "t").unwrap();
        for (a, b) in back.h.iter().zip(&z.h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_values_and_errors() {
        let g = TimeGrid::new(2000).unwrap();
        let bm = eigenpairs(&ProcessSpec::bm(), 3, g).unwrap();
        assert!((bm.lambdas[0] - 0.405_284_734_569_351).abs() < 1e-12);
        let br = eigenpairs(&ProcessSpec::bridge(), 3, g).unwrap();
        assert!((br.lambdas[0] - 0.101_321_183_642_338).abs() < 1e-12);
        assert!(bm.lambdas.windows(2).all(|w| w[0] > w[1]));
        assert!(matches!(
            eigenpairs(&ProcessSpec::ou(1.0).unwrap(), 3, g),
            Err(GsurfError::Unsupported(_))
        ));
        for sys in [&bm, &br] {
            for i in 0..3 {
                for j in 0..3 {
                    let d = trapezoid_dot(&sys.modes[i], &sys.modes[j]);
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn pairings_on_simple_inputs() {
        let g = TimeGrid::new(100).unwrap();
        let path = simulate(&ProcessSpec::bm(), g, 4).unwrap();
        let one = CameronMartinVector::from_derivative(g, |_| 1.0, "t").unwrap();
        let w = white_noise_pairing(&path, &one).unwrap();
        assert!((w - path.values[100]).abs() < 1e-12);
        assert_eq!(white_noise_pairing(&path, &CameronMartinVector::zero(g)).unwrap(), 0.0);

        let bridge = simulate(&ProcessSpec::bridge(), g, 4).unwrap();
        assert!(matches!(white_noise_pairing(&bridge, &one), Err(GsurfError::Domain(_))));

        let eig = eigenpairs(&ProcessSpec::bm(), 5, g).unwrap();
        let q1 = eig.q_mode(0).unwrap();
        let sp = spectral_pairing(&path, &q1, &eig).unwrap();
        let x1 = eig.project(&path.values)[0];
        assert!((sp - x1).abs() < 1e-10);

        let e1: Vec<f64> = eig.modes[0].iter().map(|e| e * eig.lambdas[0]).collect();
        let scaled = from_driving(
            &ProcessSpec::bm(),
            g,
            e1.windows(2).map(|w| w[1] - w[0]).collect(),
            0,
        )
        .unwrap();
        let sp = spectral_pairing(&scaled, &q1, &eig).unwrap();
        assert!((sp - eig.lambdas[0]).abs() < 1e-10);
    }

    #[test]
    fn cameron_martin_pairing_is_the_log_likelihood_derivative() {
        // Finite-difference oracle: -d/d delta log p(x + delta z) at 0, with
        // the Gaussian log-density of the driving increments.
        let g = TimeGrid::new(50).unwrap();
        let z = CameronMartinVector::from_derivative(g, |t| (3.0 * t).cos(), "cos").unwrap();
        for spec in [ProcessSpec::bm(), ProcessSpec::distorted(0.7, 1.8).unwrap(), ProcessSpec::ou(1.3).unwrap()] {
            let path = simulate(&spec, g, 11).unwrap();
            let loglik = |values: &[f64]| -> f64 {
                let n = g.n();
                let mut s = 0.0;
                for i in 0..n {
                    let innov = match spec.kind {
                        ProcessKind::Ou => {
                            let (c, k) = spec.ou_coefficients(n);
                            (values[i + 1] - c * values[i]) / k
                        }
                        ProcessKind::Distorted => (values[i + 1] - values[i] - spec.b * g.dt()) / spec.sigma,
                        _ => values[i + 1] - values[i],
                    };
                    s -= innov * innov * n as f64 / 2.0;
                }
                s
            };
            let fd = crate::path_engine::finite_diff_directional(loglik, &path, &z, 1e-5).unwrap();
            let exact = cameron_martin_pairing(&path, &z).unwrap();
            assert!((fd + exact).abs() < 1e-6 * (1.0 + exact.abs()), "{spec:?}: {fd} vs {exact}");
        }
    }
}
