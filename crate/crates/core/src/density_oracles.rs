//! Closed-form laws of the minimum `g = min_{[0,1]} X` and of the pair
//! `(g, tau)`, survival functions, and the `r -> 0` limit constants.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{GsurfError, Result};
use crate::path_engine::{ProcessKind, ProcessSpec};
use crate::quadrature::integrate;
use crate::special::{erfc, INV_SQRT_2PI};

/// Query point for the densities: level `r <= 0` and, for joint laws, the
/// argmin time `s in (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawQuery {
    pub process: ProcessSpec,
    pub r: f64,
    pub s: Option<f64>,
}

impl LawQuery {
    pub fn density(&self) -> Result<f64> {
        match self.s {
            Some(s) => min_joint_density(&self.process, self.r, s),
            None => min_density(&self.process, self.r),
        }
    }
}

fn check_level(r: f64) -> Result<()> {
    if r.is_nan() || r > 0.0 {
        return Err(GsurfError::Domain(format!("level r = {r} must be <= 0")));
    }
    Ok(())
}

fn check_time(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(GsurfError::Domain(format!("argmin time s = {s} must lie in (0, 1)")));
    }
    Ok(())
}

/// Density of the minimum over `[0, 1]` at `r <= 0`.
pub fn min_density(process: &ProcessSpec, r: f64) -> Result<f64> {
    check_level(r)?;
    let p = process.validated()?;
    Ok(match p.kind {
        ProcessKind::Bm => 2.0 * INV_SQRT_2PI * (-0.5 * r * r).exp(),
        ProcessKind::Bridge => 4.0 * r.abs() * (-2.0 * r * r).exp(),
        ProcessKind::Distorted => {
            let (b, s) = (p.b, p.sigma);
            let s2 = s * s;
            SQRT_2 / (s * PI.sqrt()) * (-(r - b).powi(2) / (2.0 * s2)).exp()
                + b / s2 * (2.0 * b * r / s2).exp() * erfc(-(r + b) / (s * SQRT_2))
        }
        ProcessKind::Ou => {
            let a = p.a;
            let d = (2.0 * a).exp_m1();
            2.0 / PI.sqrt() * (a / d).sqrt() * (-a * r * r / d).exp()
        }
        ProcessKind::Geometric => {
            return Err(GsurfError::Unsupported("no closed-form minimum law for geometric".into()))
        }
    })
}

/// Joint density of `(g, tau)` at `(r, s)`.
pub fn min_joint_density(process: &ProcessSpec, r: f64, s: f64) -> Result<f64> {
    check_level(r)?;
    check_time(s)?;
    let p = process.validated()?;
    let ar = r.abs();
    Ok(match p.kind {
        ProcessKind::Bm => ar / (PI * (s.powi(3) * (1.0 - s)).sqrt()) * (-r * r / (2.0 * s)).exp(),
        ProcessKind::Bridge => {
            let q = s * (1.0 - s);
            (2.0 / PI).sqrt() * r * r / q.powf(1.5) * (-r * r / (2.0 * q)).exp()
        }
        ProcessKind::Distorted => {
            let (b, sg) = (p.b, p.sigma);
            let s2 = sg * sg;
            let lead = ar / ((PI * s2).sqrt() * s.powf(1.5)) * (-(ar + b * s).powi(2) / (2.0 * s2 * s)).exp();
            let tail = (-b * b * (1.0 - s) / (2.0 * s2)).exp() / (PI * s2 * (1.0 - s)).sqrt()
                + b / (SQRT_2 * s2) * erfc(-b * (1.0 - s).sqrt() / (2.0 * s2).sqrt());
            lead * tail
        }
        ProcessKind::Ou => {
            return Err(GsurfError::Unsupported(
                "no joint density of (min, argmin) is available for ou".into(),
            ))
        }
        ProcessKind::Geometric => {
            return Err(GsurfError::Unsupported("no closed-form joint law for geometric".into()))
        }
    })
}

/// Scale beyond which the minimum density is negligible (far below 1e-16).
fn lower_cutoff(p: &ProcessSpec) -> f64 {
    match p.kind {
        ProcessKind::Distorted => -(40.0 * p.sigma + 2.0 * p.b.abs()),
        ProcessKind::Ou => -40.0 * ((2.0 * p.a).exp_m1() / (2.0 * p.a)).sqrt(),
        _ => -40.0,
    }
}

/// `P(g >= r)` by adaptive quadrature of [`min_density`] over `[r, 0]`.
pub fn survival(process: &ProcessSpec, r: f64) -> Result<f64> {
    check_level(r)?;
    let p = process.validated()?;
    min_density(&p, 0.0)?;
    let lo = r.max(lower_cutoff(&p));
    integrate(|x| min_density(&p, x).unwrap_or(f64::NAN), lo, 0.0, 1e-13, 1e-13)
}

/// `P(g <= r)`.
pub fn cdf(process: &ProcessSpec, r: f64) -> Result<f64> {
    if r > 0.0 {
        return Ok(1.0);
    }
    let p = process.validated()?;
    let lo = lower_cutoff(&p);
    if r <= lo {
        return Ok(0.0);
    }
    integrate(|x| min_density(&p, x).unwrap_or(f64::NAN), lo, r, 1e-13, 1e-13)
}

/// Limit constants of the distorted process: `P(g >= r) ~ C r` and the limit
/// `pi(r, s) / P(g >= r) -> pi_tilde(s)` as `r -> 0-`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub b: f64,
    pub sigma: f64,
    pub c: f64,
}

impl LimitConstants {
    /// Limit ratio `pi(r, s) / P(g >= r)`, with prefactor `1 / |C|` so the
    /// result is positive.
    pub fn tilde_pi(&self, s: f64) -> Result<f64> {
        check_time(s)?;
        let (b, sg) = (self.b, self.sigma);
        let s2 = sg * sg;
        let bracket = (-b * b / (2.0 * s2)).exp() / (PI * s2 * (1.0 - s)).sqrt()
            + b / (SQRT_2 * s2) * (-b * b * s / (2.0 * s2)).exp() * erfc(-b * (1.0 - s).sqrt() / (2.0 * s2).sqrt());
        Ok(bracket / (self.c.abs() * (PI * s2).sqrt() * s.powf(1.5)))
    }
}

pub fn limit_constants(process: &ProcessSpec) -> Result<LimitConstants> {
    let p = process.validated()?;
    if p.kind != ProcessKind::Distorted {
        return Err(GsurfError::Unsupported(format!("limit constants are defined for distorted, not {}", p.kind)));
    }
    let (b, s) = (p.b, p.sigma);
    let s2 = s * s;
    let c = b / s2 * (erfc(b / (s * SQRT_2)) - 2.0) - (2.0 / (PI * s2)).sqrt() * (-b * b / (2.0 * s2)).exp();
    Ok(LimitConstants { b, sigma: s, c })
}

/// Limit weight of the meander identity: `pi(r, s) / P(g >= r)` for Brownian
/// motion as `r -> 0-`.
pub fn meander_weight(s: f64) -> f64 {
    INV_SQRT_2PI / (s.powi(3) * (1.0 - s)).sqrt()
}

/// Limit weight of the Bessel-bridge identity for the Brownian bridge.
pub fn bessel_weight(s: f64) -> f64 {
    INV_SQRT_2PI / (s * (1.0 - s)).powf(1.5)
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// the minimum law of `process`. The oracle CDF is accumulated along the
/// sorted sample by quadrature between consecutive points.
pub fn ks_statistic(samples: &[f64], process: &ProcessSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(GsurfError::Parameter("no samples".into()));
    }
    let p = process.validated()?;
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let lo = lower_cutoff(&p);
    let mut f = cdf(&p, xs[0])?;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 && x > lo && x > xs[i - 1] {
            let a = xs[i - 1].max(lo);
            f += integrate(|y| min_density(&p, y).unwrap_or(f64::NAN), a, x.min(0.0), 1e-15, 1e-12)?;
        }
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_unit;

    #[test]
    fn ks_separates_matching_and_wrong_laws() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        // the Brownian minimum over [0, 1] has the law of -|Z|
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(7);
        let xs: Vec<f64> = (0..20_000).map(|_| -f64::abs(StandardNormal.sample(&mut rng))).collect();
        let d = ks_statistic(&xs, &ProcessSpec::bm()).unwrap();
        assert!(d < 1.63 / (20_000f64).sqrt(), "{d}");
        let wrong = ks_statistic(&xs, &ProcessSpec::bridge()).unwrap();
        assert!(wrong > 0.1, "{wrong}");
    }

    fn distorted(b: f64, s: f64) -> ProcessSpec {
        ProcessSpec::distorted(b, s).unwrap()
    }

    #[test]
    fn printed_values() {
        let bm = ProcessSpec::bm();
        assert!((min_density(&bm, 0.0).unwrap() - 0.797_884_560_802_865_4).abs() < 1e-15);
        assert!((min_density(&bm, -1.0).unwrap() - 0.483_941_449_038_286_7).abs() < 1e-15);
        assert_eq!(min_density(&ProcessSpec::bridge(), 0.0).unwrap(), 0.0);
        let ou = ProcessSpec::ou(1.0).unwrap();
        assert!((min_density(&ou, 0.0).unwrap() - 0.446_412_871_899_551_2).abs() < 1e-14);
        let j = min_joint_density(&bm, -1.0, 0.5).unwrap();
        assert!((j - (-1f64).exp() / (PI * 0.25)).abs() < 1e-15);
        assert!((j - 0.468_398_652_194_553_3).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let bm = ProcessSpec::bm();
        assert!(matches!(min_density(&bm, 0.1), Err(GsurfError::Domain(_))));
        assert!(matches!(min_joint_density(&bm, -1.0, 1.0), Err(GsurfError::Domain(_))));
        let geo = ProcessSpec::geometric(0.0, 1.0).unwrap();
        assert!(matches!(min_density(&geo, -1.0), Err(GsurfError::Unsupported(_))));
        let ou = ProcessSpec::ou(1.0).unwrap();
        assert!(matches!(min_joint_density(&ou, -1.0, 0.5), Err(GsurfError::Unsupported(_))));
        assert!(matches!(limit_constants(&bm), Err(GsurfError::Unsupported(_))));
    }

    #[test]
    fn densities_normalize() {
        let specs = [
            ProcessSpec::bm(),
            ProcessSpec::bridge(),
            distorted(1.0, 1.0),
            distorted(0.5, 2.0),
            ProcessSpec::ou(0.5).unwrap(),
            ProcessSpec::ou(1.0).unwrap(),
            ProcessSpec::ou(2.0).unwrap(),
        ];
        for p in specs {
            let total = survival(&p, -1e9).unwrap();
            assert!((total - 1.0).abs() < 1e-9, "{p:?}: {total}");
            assert!((cdf(&p, -0.3).unwrap() + survival(&p, -0.3).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_densities_marginalize() {
        for p in [ProcessSpec::bm(), ProcessSpec::bridge(), distorted(1.0, 1.0), distorted(0.5, 2.0)] {
            for r in [-0.5, -1.0, -2.0] {
                let m = integrate_unit(|s| min_joint_density(&p, r, s).unwrap(), 1e-12, 1e-12).unwrap();
                let want = min_density(&p, r).unwrap();
                assert!((m - want).abs() < 1e-8, "{p:?} r={r}: {m} vs {want}");
            }
        }
    }

    #[test]
    fn arcsine_marginal() {
        let bm = ProcessSpec::bm();
        let v = integrate(|r| min_joint_density(&bm, r, 0.5).unwrap(), -40.0, 0.0, 1e-13, 1e-13).unwrap();
        assert!((v - 2.0 / PI).abs() < 1e-8);
    }

    #[test]
    fn small_level_limits() {
        let r = -1e-4;
        let bm = survival(&ProcessSpec::bm(), r).unwrap() / r.abs();
        assert!((bm - 2.0 * INV_SQRT_2PI).abs() < 1e-6);
        let br = survival(&ProcessSpec::bridge(), r).unwrap() / (r * r);
        assert!((br - 2.0).abs() < 1e-6);
        assert!((survival(&ProcessSpec::bm(), -1e9).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distorted_limit_constants() {
        let d = distorted(1.0, 1.0);
        let lc = limit_constants(&d).unwrap();
        assert!((lc.c + 2.166_630_941_175_373).abs() < 1e-13);
        let r = -1e-4;
        let ratio = min_joint_density(&d, r, 0.5).unwrap() / survival(&d, r).unwrap();
        assert!((ratio - lc.tilde_pi(0.5).unwrap()).abs() < 1e-4);
        for k in 1..20 {
            assert!(lc.tilde_pi(k as f64 / 20.0).unwrap() > 0.0);
        }
        // the meander and Bessel weights are the same limits for bm and bridge
        let bm = ProcessSpec::bm();
        let rr = -1e-5;
        for s in [0.2, 0.5, 0.8] {
            let q = min_joint_density(&bm, rr, s).unwrap() / survival(&bm, rr).unwrap();
            assert!((q / meander_weight(s) - 1.0).abs() < 1e-4);
            let br = ProcessSpec::bridge();
            let q = min_joint_density(&br, rr, s).unwrap() / survival(&br, rr).unwrap();
            assert!((q / bessel_weight(s) - 1.0).abs() < 1e-4);
        }
    }
}
