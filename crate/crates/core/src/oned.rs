//! The scalar setting `y = c·f + ξ`, `f ∈ [−τ, τ]`, estimating `b·f`.
//!
//! Here everything has a closed form: the best linear estimator, the
//! universal lower bound valid for every recovery map under log-concave
//! noise, and the Rademacher example where a discontinuous map beats every
//! linear one by an unbounded factor.

use std::f64::consts::{E, SQRT_2};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::risk::{AffinePiece, RecoveryMap};

/// Numerical constants of the log-concave lower-bound argument, evaluated
/// from their defining expressions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Constants {
    /// `1/(100√3·e⁴)`.
    pub alpha: f64,
    /// `1/(2√3·e²)`.
    pub delta: f64,
    /// `1/(5e)`.
    pub gamma: f64,
    /// Equal to `alpha`.
    pub kappa1: f64,
    /// `e`.
    pub borell_c: f64,
}

impl Constants {
    pub fn new() -> Self {
        let sqrt3 = 3.0_f64.sqrt();
        let alpha = 1.0 / (100.0 * sqrt3 * E.powi(4));
        Constants {
            alpha,
            delta: 1.0 / (2.0 * sqrt3 * E * E),
            gamma: 1.0 / (5.0 * E),
            kappa1: alpha,
            borell_c: E,
        }
    }
}

impl Default for Constants {
    fn default() -> Self {
        Self::new()
    }
}

/// `(b, c, τ, σ)` with `c ≠ 0`, `τ > 0`, `σ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplestSetting {
    pub b: f64,
    pub c: f64,
    pub tau: f64,
    pub sigma: f64,
}

impl SimplestSetting {
    pub fn new(b: f64, c: f64, tau: f64, sigma: f64) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::invalid("b", "must be finite"));
        }
        if c == 0.0 || !c.is_finite() {
            return Err(Error::invalid("c", "must be finite and nonzero"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau", "must be positive and finite"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be finite and nonnegative"));
        }
        Ok(SimplestSetting { b, c, tau, sigma })
    }

    /// `|c|·τ`, the signal amplitude that the noise level is compared to.
    pub fn signal(&self) -> f64 {
        self.c.abs() * self.tau
    }
}

/// Best linear estimator for the squared statistical risk:
/// `a* = bcτ²/(σ² + c²τ²)` with value `|b|τσ/√(σ² + c²τ²)`.
pub fn optimal_linear(setting: &SimplestSetting) -> (f64, f64) {
    let SimplestSetting { b, c, tau, sigma } = *setting;
    let denom = sigma * sigma + c * c * tau * tau;
    let a = b * c * tau * tau / denom;
    let value = b.abs() * tau * sigma / denom.sqrt();
    (a, value)
}

/// Lower bound valid for every recovery map; `None` when `σ = 0`, where the
/// bound is vacuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBound {
    pub value: f64,
    pub vacuous: bool,
}

/// `α·(|b|/|c|)·min{σ, |c|τ}`.
pub fn lower_bound_all_maps(setting: &SimplestSetting) -> LowerBound {
    if setting.sigma == 0.0 {
        return LowerBound {
            value: 0.0,
            vacuous: true,
        };
    }
    let alpha = Constants::new().alpha;
    LowerBound {
        value: alpha * (setting.b.abs() / setting.c.abs()) * setting.sigma.min(setting.signal()),
        vacuous: false,
    }
}

/// The two-piece map `y ↦ (b/c)(y − σ)` for `y > 0`, `(b/c)(y + σ)` for
/// `y < 0`, and `0` at the origin. Error-free under Rademacher noise when
/// `σ > |c|τ`.
pub fn rademacher_optimal_map(setting: &SimplestSetting) -> Result<RecoveryMap> {
    if !(setting.sigma > setting.signal()) {
        return Err(Error::Precondition(format!(
            "the zero-error map needs sigma > |c|·tau ({} ≤ {})",
            setting.sigma,
            setting.signal()
        )));
    }
    let slope = setting.b / setting.c;
    RecoveryMap::piecewise_affine(
        vec![0.0],
        vec![
            AffinePiece {
                slope,
                intercept: slope * setting.sigma,
            },
            AffinePiece {
                slope,
                intercept: -slope * setting.sigma,
            },
        ],
        vec![0.0],
    )
}

/// `|b|σ/(|c|√2)`, a lower bound on the squared-risk of every map under
/// Rademacher noise when `σ ≤ |c|τ`.
pub fn rademacher_lower_bound(setting: &SimplestSetting) -> Result<f64> {
    if setting.sigma > setting.signal() {
        return Err(Error::Precondition(format!(
            "the bound needs sigma ≤ |c|·tau ({} > {})",
            setting.sigma,
            setting.signal()
        )));
    }
    Ok(setting.b.abs() * setting.sigma / (setting.c.abs() * SQRT_2))
}

/// Best linear squared-risk in the regime `σ > |c|τ`, where some nonlinear
/// map has zero risk; the near-optimality ratio of linear maps is unbounded
/// there.
pub fn linearity_failure_ratio(setting: &SimplestSetting) -> Result<f64> {
    if !(setting.sigma > setting.signal()) {
        return Err(Error::Precondition(
            "linear maps are only shown to fail when sigma > |c|·tau".into(),
        ));
    }
    Ok(optimal_linear(setting).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setting(b: f64, c: f64, tau: f64, sigma: f64) -> SimplestSetting {
        SimplestSetting::new(b, c, tau, sigma).unwrap()
    }

    #[test]
    fn constants_match_decimal_expansions() {
        let k = Constants::new();
        assert!((k.alpha / 1.05745e-4 - 1.0).abs() < 1e-5);
        assert!((k.delta / 0.039_067_7 - 1.0).abs() < 1e-5);
        assert!((k.gamma / 0.073_575_9 - 1.0).abs() < 1e-5);
        // α = δγ²/2
        assert!((k.alpha - k.delta * k.gamma * k.gamma / 2.0).abs() < 1e-18);
        assert_eq!(k.kappa1, k.alpha);
    }

    #[test]
    fn optimal_linear_examples() {
        let (a, v) = optimal_linear(&setting(1.0, 1.0, 1.0, 1.0));
        assert!((a - 0.5).abs() < 1e-12);
        assert!((v - SQRT_2 / 2.0).abs() < 1e-12);

        let (a, v) = optimal_linear(&setting(1.0, 1.0, 1.0, 0.0));
        assert_eq!((a, v), (1.0, 0.0));

        let (_, v) = optimal_linear(&setting(2.0, 3.0, 0.5, 1.0));
        assert!((v - 2.0 * 0.5 / 3.25_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn setting_rejects_zero_c() {
        assert!(SimplestSetting::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(SimplestSetting::new(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let alpha = Constants::new().alpha;
        assert_eq!(lower_bound_all_maps(&setting(1.0, 1.0, 1.0, 1.0)).value, alpha);
        assert_eq!(lower_bound_all_maps(&setting(0.0, 1.0, 1.0, 1.0)).value, 0.0);
        assert_eq!(
            lower_bound_all_maps(&setting(2.0, 1.0, 1.0, 3.0)).value,
            2.0 * alpha
        );
        let flat = lower_bound_all_maps(&setting(1.0, 1.0, 1.0, 0.0));
        assert!(flat.vacuous && flat.value == 0.0);
    }

    #[test]
    fn rademacher_map_shape() {
        let map = rademacher_optimal_map(&setting(1.0, 1.0, 1.0, 2.0)).unwrap();
        assert_eq!(map.eval(3.0), 1.0);
        assert_eq!(map.eval(-3.0), -1.0);
        assert_eq!(map.eval(0.0), 0.0);
        assert!(rademacher_optimal_map(&setting(1.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn rademacher_lower_bound_examples() {
        let v = rademacher_lower_bound(&setting(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((v - SQRT_2 / 2.0).abs() < 1e-15);
        let v = rademacher_lower_bound(&setting(1.0, 1.0, 1.0, 0.5)).unwrap();
        assert!((v - 0.353_553_390_593_273_8).abs() < 1e-15);
        assert_eq!(rademacher_lower_bound(&setting(1.0, 1.0, 1.0, 0.0)).unwrap(), 0.0);
        assert!(rademacher_lower_bound(&setting(1.0, 1.0, 1.0, 2.0)).is_err());
    }

    #[test]
    fn linearity_failure_examples() {
        let v = linearity_failure_ratio(&setting(1.0, 1.0, 1.0, 2.0)).unwrap();
        assert!((v - 2.0 / 5.0_f64.sqrt()).abs() < 1e-15);
        let v = linearity_failure_ratio(&setting(1.0, 1.0, 1.0, 10.0)).unwrap();
        assert!((v - 10.0 / 101.0_f64.sqrt()).abs() < 1e-15);
        let v = linearity_failure_ratio(&setting(1.0, 1.0, 1.0, 1.01)).unwrap();
        assert!((v - 1.01 / 2.0201_f64.sqrt()).abs() < 1e-15);
        assert!(linearity_failure_ratio(&setting(1.0, 1.0, 1.0, 1.0)).is_err());
    }
}
