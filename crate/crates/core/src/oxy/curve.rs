//! Parametric oxygen–haemoglobin dissociation curve and its closed-form
//! inverse (the "pnl" baseline estimator).

use crate::{EwsError, Result};

const CURVE_NUMERATOR: f64 = 23400.0;
const CURVE_LINEAR: f64 = 150.0;

/// Haemoglobin saturation (fraction) at arterial oxygen tension `pao2` (mmHg):
/// `S(p) = 1 / (23400 / (p^3 + 150 p) + 1)`.
pub fn severinghaus_sao2(pao2: f64) -> Result<f64> {
    if !(pao2 > 0.0) || !pao2.is_finite() {
        return Err(EwsError::Domain(format!("PaO2 must be positive and finite, got {pao2}")));
    }
    Ok(1.0 / (CURVE_NUMERATOR / (pao2.powi(3) + CURVE_LINEAR * pao2) + 1.0))
}

/// PaO2 (mmHg) whose saturation under [`severinghaus_sao2`] equals `sao2`.
///
/// Solves `p^3 + 150 p - K = 0` with `K = 23400 s / (1 - s)` in closed form.
/// The single real root is `u - 50 / u` with
/// `u = cbrt(K/2 + sqrt((K/2)^2 + 50^3))`, which avoids the cancellation of the
/// textbook two-cube-root form.
pub fn ellis_pao2(sao2: f64) -> Result<f64> {
    if !(sao2 > 0.0 && sao2 < 1.0) {
        return Err(EwsError::Domain(format!("saturation must lie in (0, 1), got {sao2}")));
    }
    let half_k = 0.5 * CURVE_NUMERATOR / (1.0 / sao2 - 1.0);
    let third_a = CURVE_LINEAR / 3.0;
    let u = (half_k + (half_k * half_k + third_a.powi(3)).sqrt()).cbrt();
    Ok(u - third_a / u)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent inverse by bisection on the forward model.
    fn bisect(target: f64) -> f64 {
        let (mut lo, mut hi) = (1e-6, 1e4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if severinghaus_sao2(mid).unwrap() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn forward_at_100() {
        // 23400 / (1e6 + 15000) = 0.0230541871...; 1 / 1.0230541871 = 0.977465...
        let s = severinghaus_sao2(100.0).unwrap();
        assert!((s - 0.9775).abs() < 1e-4, "{s}");
    }

    #[test]
    fn forward_monotone_and_bounded() {
        let mut prev = 0.0;
        for i in 1..2000 {
            let s = severinghaus_sao2(i as f64 * 0.5).unwrap();
            assert!(s > prev && s < 1.0);
            prev = s;
        }
        assert!(severinghaus_sao2(1e5).unwrap() > 0.999_999);
    }

    #[test]
    fn domain_errors() {
        assert!(severinghaus_sao2(0.0).is_err());
        assert!(severinghaus_sao2(-3.0).is_err());
        assert!(ellis_pao2(1.0).is_err());
        assert!(ellis_pao2(0.0).is_err());
        assert!(ellis_pao2(1.2).is_err());
    }

    #[test]
    fn round_trip_at_100() {
        let p = ellis_pao2(severinghaus_sao2(100.0).unwrap()).unwrap();
        assert!((p - 100.0).abs() < 1e-6);
    }

    #[test]
    fn inverse_matches_bisection_at_090() {
        let p = ellis_pao2(0.90).unwrap();
        assert!(p > 55.0 && p < 65.0, "{p}");
        assert!((severinghaus_sao2(p).unwrap() - 0.90).abs() < 1e-9);
        assert!((p - bisect(0.90)).abs() < 1e-8);
    }

    #[test]
    fn inverse_monotone() {
        assert!(ellis_pao2(0.80).unwrap() < ellis_pao2(0.95).unwrap());
        let mut prev = 0.0;
        for i in 1..990 {
            let p = ellis_pao2(i as f64 / 1000.0).unwrap();
            assert!(p > prev);
            prev = p;
        }
    }
}
