//! Brute-force Gaussian expectations of functionals of at most two
//! coordinates, used as closed-side oracles for the flat identities.

use gsurf_core::functional::CylindricalFunctional;
use gsurf_core::path_engine::{ProcessKind, ProcessSpec, TimeGrid};
use gsurf_core::special::norm_pdf;
use gsurf_core::spectral_ops::CameronMartinVector;
use gsurf_core::{GsurfError, Result};

/// Half-width of the integration box in standard normal units.
const BOX: f64 = 9.0;
/// Simpson intervals per dimension.
const INTERVALS: usize = 600;

pub fn covariance(process: &ProcessSpec, s: f64, t: f64) -> Result<f64> {
    match process.kind {
        ProcessKind::Bm => Ok(s.min(t)),
        ProcessKind::Bridge => Ok(s.min(t) - s * t),
        other => Err(GsurfError::Unsupported(format!("no Gaussian moment oracle for {other}"))),
    }
}

fn simpson_nodes() -> Vec<(f64, f64)> {
    let h = 2.0 * BOX / INTERVALS as f64;
    (0..=INTERVALS)
        .map(|i| {
            let u = -BOX + i as f64 * h;
            let w = if i == 0 || i == INTERVALS {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (u, w * h / 3.0 * norm_pdf(u))
        })
        .collect()
}

/// `E[f(x(t_1), .., x(t_m))]` for `m <= 2` by Simpson's rule in the Cholesky
/// coordinates of the covariance.
pub fn gaussian_expectation<F: Fn(&[f64]) -> f64>(process: &ProcessSpec, times: &[f64], f: F) -> Result<f64> {
    let nodes = simpson_nodes();
    match times {
        [] => Ok(f(&[])),
        [t] => {
            let sd = covariance(process, *t, *t)?.max(0.0).sqrt();
            Ok(nodes.iter().map(|(u, w)| w * f(&[sd * u])).sum())
        }
        [s, t] => {
            let c11 = covariance(process, *s, *s)?.max(0.0);
            let c12 = covariance(process, *s, *t)?;
            let c22 = covariance(process, *t, *t)?.max(0.0);
            let l11 = c11.sqrt();
            let l21 = if l11 > 0.0 { c12 / l11 } else { 0.0 };
            let l22 = (c22 - l21 * l21).max(0.0).sqrt();
            let mut total = 0.0;
            for (u, wu) in &nodes {
                let x1 = l11 * u;
                let inner: f64 = nodes.iter().map(|(v, wv)| wv * f(&[x1, l21 * u + l22 * v])).sum();
                total += wu * inner;
            }
            Ok(total)
        }
        _ => Err(GsurfError::Unsupported("Gaussian moment oracle needs at most two coordinates".into())),
    }
}

/// Grid times read by the functionals, merged and sorted.
fn merged_times(phis: &[&CylindricalFunctional], grid: TimeGrid) -> Vec<usize> {
    let mut idx: Vec<usize> = phis.iter().flat_map(|p| p.indices(grid)).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Value and `D phi . z` of `phi` from the merged coordinates `x`.
fn value_and_slope(
    phi: &CylindricalFunctional,
    grid: TimeGrid,
    merged: &[usize],
    x: &[f64],
    z: &CameronMartinVector,
) -> (f64, f64) {
    let idx = phi.indices(grid);
    let local: Vec<f64> = idx.iter().map(|i| x[merged.binary_search(i).expect("merged")]).collect();
    let mut g = vec![0.0; idx.len()];
    phi.grad_at(&local, &mut g);
    let slope = idx.iter().zip(&g).map(|(i, d)| d * z.at(grid.node(*i))).sum();
    (phi.eval_at(&local), slope)
}

/// `E[D phi . z]` on the grid.
pub fn flat_closed_side(
    process: &ProcessSpec,
    grid: TimeGrid,
    phi: &CylindricalFunctional,
    z: &CameronMartinVector,
) -> Result<f64> {
    let merged = merged_times(&[phi], grid);
    let times: Vec<f64> = merged.iter().map(|i| grid.node(*i)).collect();
    gaussian_expectation(process, &times, |x| value_and_slope(phi, grid, &merged, x, z).1)
}

/// `E[(D phi . z) psi + phi (D psi . z)]` on the grid.
pub fn product_closed_side(
    process: &ProcessSpec,
    grid: TimeGrid,
    phi: &CylindricalFunctional,
    psi: &CylindricalFunctional,
    z: &CameronMartinVector,
) -> Result<f64> {
    let merged = merged_times(&[phi, psi], grid);
    let times: Vec<f64> = merged.iter().map(|i| grid.node(*i)).collect();
    gaussian_expectation(process, &times, |x| {
        let (a, da) = value_and_slope(phi, grid, &merged, x, z);
        let (b, db) = value_and_slope(psi, grid, &merged, x, z);
        da * b + a * db
    })
}
