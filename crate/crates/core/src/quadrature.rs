//! Adaptive Gauss–Kronrod (7/15) quadrature and a few fixed rules.

use crate::error::{GsurfError, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_INTERVALS: usize = 4000;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let s = f(c - h * x) + f(c + h * x);
        kron += w * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to `max(abs_tol, rel_tol * |I|)` by global
/// bisection of the worst interval. `f` must be finite on the open interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(GsurfError::Parameter("integration limits must be finite".into()));
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (v, e) = gk15(&f, lo, hi);
    let mut parts = vec![(lo, hi, v, e)];
    let (mut total, mut err) = (v, e);
    while err > abs_tol.max(rel_tol * total.abs()) {
        if parts.len() >= MAX_INTERVALS {
            return Err(GsurfError::Numeric(format!(
                "quadrature did not converge: estimate {total}, error {err}"
            )));
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (l, r, pv, pe) = parts.swap_remove(worst);
        let m = 0.5 * (l + r);
        let (v1, e1) = gk15(&f, l, m);
        let (v2, e2) = gk15(&f, m, r);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        parts.push((l, m, v1, e1));
        parts.push((m, r, v2, e2));
    }
    if !total.is_finite() {
        return Err(GsurfError::Numeric("quadrature produced a non-finite value".into()));
    }
    // Re-sum to shed accumulated cancellation from the running updates.
    Ok(sign * parts.iter().map(|p| p.2).sum::<f64>())
}

/// Integrates `f` over `(0, 1)` after the substitution `s = (1 - cos t) / 2`,
/// which tames integrable power singularities at both ends. `f` is never
/// evaluated at `0` or `1`.
pub fn integrate_unit<F: Fn(f64) -> f64>(f: F, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    use std::f64::consts::PI;
    integrate(
        |t| {
            let s = 0.5 * (1.0 - t.cos());
            if s <= 0.0 || s >= 1.0 {
                0.0
            } else {
                0.5 * t.sin() * f(s)
            }
        },
        0.0,
        PI,
        abs_tol,
        rel_tol,
    )
}

/// Trapezoid rule for node values on the uniform grid over `[0, 1]`.
pub fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let inner: f64 = values[1..n].iter().sum();
    (inner + 0.5 * (values[0] + values[n])) / n as f64
}

/// Trapezoid `L^2(0, 1)` inner product of two node vectors.
pub fn trapezoid_dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() - 1;
    let mut s = 0.5 * (a[0] * b[0] + a[n] * b[n]);
    for i in 1..n {
        s += a[i] * b[i];
    }
    s / n as f64
}

/// Gauss–Chebyshev (second kind) rule on `s in (0, 1)` with `m` nodes:
/// returns `(s_k, w_k)` with `sum w_k f(s_k) ~ int_0^1 f(s) ds`.
///
/// Nodes are `s = (1 - cos theta) / 2` at `theta_k = (k - 1/2) pi / m`; the
/// weights carry the Jacobian `sqrt(s (1 - s))`, so integrands with inverse
/// square-root endpoint behaviour are handled well.
pub fn chebyshev_nodes(m: usize) -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    (1..=m)
        .map(|k| {
            let theta = (k as f64 - 0.5) * PI / m as f64;
            let s = 0.5 * (1.0 - theta.cos());
            (s, PI / m as f64 * (s * (1.0 - s)).sqrt())
        })
        .collect()
}

/// Weights giving the value at 0 of the least-squares line and of the
/// interpolating polynomial through data at the abscissae `rs`.
pub fn extrapolation_weights(rs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = rs.len() as f64;
    let mean = rs.iter().sum::<f64>() / m;
    let sxx: f64 = rs.iter().map(|r| (r - mean).powi(2)).sum();
    let linear = rs.iter().map(|r| 1.0 / m - mean * (r - mean) / sxx).collect();
    let lagrange = (0..rs.len())
        .map(|j| {
            (0..rs.len())
                .filter(|&i| i != j)
                .map(|i| -rs[i] / (rs[j] - rs[i]))
                .product()
        })
        .collect();
    (linear, lagrange)
}
