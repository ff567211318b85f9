//! Error function family and standard normal helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1 / sqrt(2 pi)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Complementary error function, relative error below `1e-14` on the real
/// line (fdlibm rational approximations).
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `sqrt(2 / pi)`.
pub fn sqrt_2_over_pi() -> f64 {
    (2.0 / PI).sqrt()
}

#[cfg(test)]
#[allow(clippy::excessive_precision, clippy::approx_constant)]
mod tests {
    use super::*;

    // 40-digit reference evaluations.
    const ERFC_REFERENCE: [(f64, f64); 20] = [
        (-3.0, 1.9999779095030014146),
        (-1.5, 1.9661051464753107271),
        (-0.7071067811865476, 1.6826894921370859303),
        (-0.25, 1.276326390168236933),
        (0.0, 1.0),
        (1e-08, 0.99999998871620832904),
        (0.1, 0.8875370839817151016),
        (0.3, 0.67137324054087258381),
        (0.5, 0.47950012218695346232),
        (0.7071067811865476, 0.31731050786291406975),
        (0.84, 0.23485728854500548266),
        (1.0, 0.15729920705028513066),
        (1.5, 0.033894853524689272933),
        (2.0, 0.0046777349810472658379),
        (2.5, 0.00040695201744495893956),
        (3.0, 0.000022090496998585441373),
        (4.0, 1.5417257900280018852e-8),
        (5.0, 1.5374597944280348502e-12),
        (6.0, 2.1519736712498913117e-17),
        (8.0, 1.122429717298292708e-29),
    ];

    #[test]
    fn erfc_matches_reference() {
        for (x, want) in ERFC_REFERENCE {
            let got = erfc(x);
            let rel = ((got - want) / want).abs();
            assert!(rel <= 1e-14, "erfc({x}) = {got}, want {want}, rel {rel}");
        }
    }

    #[test]
    fn normal_helpers() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-15);
        assert!((norm_pdf(0.0) - INV_SQRT_2PI).abs() < 1e-16);
        assert!((erf(0.5) + erfc(0.5) - 1.0).abs() < 1e-16);
    }
}
