//! Convex conjugate of the consumption–leisure utility.
//!
//! `ũ(z, y) = max_{c ≥ 0, 0 ≤ l ≤ L} u(c, l) - (c + y l) z` with
//! `u(c, l) = (l^{1-α} c^α)^{1-γ} / (α(1-γ))`. The maximizer is interior in
//! leisure for `z ≥ z̃(y)` and pinned at the cap `L` below it.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Result};
use crate::model::{leisure_threshold_unchecked, PreferenceParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `z ≥ z̃(y)`: leisure below the cap.
    InteriorLeisure,
    /// `z < z̃(y)`: leisure pinned at `L`.
    CappedLeisure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateResult {
    pub value: f64,
    pub c_hat: f64,
    pub l_hat: f64,
    pub regime: Regime,
}

/// Period utility `u(c, l)`.
pub fn utility(c: f64, l: f64, prefs: &PreferenceParams) -> f64 {
    let p = prefs.alpha * (1.0 - prefs.gamma);
    c.powf(p) * l.powf((1.0 - prefs.alpha) * (1.0 - prefs.gamma)) / p
}

/// `∂u/∂c`.
pub fn marginal_consumption(c: f64, l: f64, prefs: &PreferenceParams) -> f64 {
    let p = prefs.alpha * (1.0 - prefs.gamma);
    c.powf(p - 1.0) * l.powf((1.0 - prefs.alpha) * (1.0 - prefs.gamma))
}

/// `∂u/∂l`.
pub fn marginal_leisure(c: f64, l: f64, prefs: &PreferenceParams) -> f64 {
    let q = (1.0 - prefs.alpha) * (1.0 - prefs.gamma);
    (1.0 - prefs.alpha) / prefs.alpha * c.powf(prefs.alpha * (1.0 - prefs.gamma)) * l.powf(q - 1.0)
}

/// Consumption solving `∂u/∂c(c, l) = z` at a fixed leisure level.
pub fn consumption_at_leisure(z: f64, l: f64, prefs: &PreferenceParams) -> f64 {
    let exponent = prefs.alpha * (1.0 - prefs.gamma) - 1.0;
    (z * l.powf((prefs.alpha - 1.0) * (1.0 - prefs.gamma))).powf(1.0 / exponent)
}

pub fn dual_utility(z: f64, y: f64, prefs: &PreferenceParams) -> Result<ConjugateResult> {
    ensure_positive("shadow price z", z)?;
    ensure_positive("wage y", y)?;
    prefs.validate()?;
    Ok(dual_utility_unchecked(z, y, prefs))
}

pub(crate) fn dual_utility_unchecked(z: f64, y: f64, prefs: &PreferenceParams) -> ConjugateResult {
    if z >= leisure_threshold_unchecked(y, prefs) {
        interior_branch(z, y, prefs)
    } else {
        capped_branch(z, y, prefs)
    }
}

/// Interior-leisure formulas, evaluated regardless of the threshold.
pub fn interior_branch(z: f64, y: f64, prefs: &PreferenceParams) -> ConjugateResult {
    let ky = prefs.consumption_leisure_ratio() * y;
    let exponent = (prefs.alpha * (1.0 - prefs.gamma) - 1.0) / prefs.gamma;
    let l_hat = z.powf(-1.0 / prefs.gamma) * ky.powf(exponent);
    let c_hat = ky * l_hat;
    ConjugateResult {
        value: utility(c_hat, l_hat, prefs) - (c_hat + y * l_hat) * z,
        c_hat,
        l_hat,
        regime: Regime::InteriorLeisure,
    }
}

/// Capped-leisure formulas, evaluated regardless of the threshold.
pub fn capped_branch(z: f64, y: f64, prefs: &PreferenceParams) -> ConjugateResult {
    let l_hat = prefs.big_l;
    let c_hat = consumption_at_leisure(z, l_hat, prefs);
    ConjugateResult {
        value: utility(c_hat, l_hat, prefs) - (c_hat + y * l_hat) * z,
        c_hat,
        l_hat,
        regime: Regime::CappedLeisure,
    }
}

/// Running reward of the dual problem before retirement: `ũ(z, y) + y z`.
pub fn dual_running_payoff(z: f64, y: f64, prefs: &PreferenceParams) -> Result<f64> {
    Ok(dual_utility(z, y, prefs)?.value + y * z)
}

pub(crate) fn dual_running_payoff_unchecked(z: f64, y: f64, prefs: &PreferenceParams) -> f64 {
    dual_utility_unchecked(z, y, prefs).value + y * z
}

/// Running reward after retirement: `sup_c u(c, 1) - c z = Γ/(1-Γ) z^{(Γ-1)/Γ}`.
pub fn post_retirement_payoff(z: f64, prefs: &PreferenceParams) -> Result<f64> {
    ensure_positive("shadow price z", z)?;
    Ok(post_retirement_payoff_unchecked(z, prefs))
}

pub(crate) fn post_retirement_payoff_unchecked(z: f64, prefs: &PreferenceParams) -> f64 {
    let g = prefs.gamma_cap();
    g / (1.0 - g) * z.powf((g - 1.0) / g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::leisure_threshold;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn desk() -> PreferenceParams {
        PreferenceParams { beta: 0.04, gamma: 3.0, alpha: 0.5, big_l: 0.5, hazard: 0.0 }
    }

    #[test]
    fn threshold_point_by_hand() {
        let r = dual_utility(8.0, 1.0, &desk()).unwrap();
        assert_eq!(r.regime, Regime::InteriorLeisure);
        assert_relative_eq!(r.l_hat, 0.5, epsilon = 1e-14);
        assert_relative_eq!(r.c_hat, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn branches_meet_at_threshold() {
        for &(gamma, alpha, big_l, y) in
            &[(3.0, 0.5, 0.5, 1.0), (0.5, 0.3, 0.8, 2.5), (6.0, 0.8, 0.2, 0.3)]
        {
            let p = PreferenceParams { beta: 0.04, gamma, alpha, big_l, hazard: 0.0 };
            let zt = leisure_threshold(y, &p).unwrap();
            let a = interior_branch(zt, y, &p);
            let b = capped_branch(zt, y, &p);
            assert_relative_eq!(a.value, b.value, max_relative = 1e-10);
            assert_relative_eq!(a.l_hat, b.l_hat, max_relative = 1e-10);
            assert_relative_eq!(a.c_hat, b.c_hat, max_relative = 1e-10);
        }
    }

    #[test]
    fn regime_follows_threshold() {
        let p = desk();
        assert_eq!(dual_utility(7.9, 1.0, &p).unwrap().regime, Regime::CappedLeisure);
        assert_eq!(dual_utility(7.9, 1.0, &p).unwrap().l_hat, 0.5);
        assert_eq!(dual_utility(8.1, 1.0, &p).unwrap().regime, Regime::InteriorLeisure);
    }

    #[test]
    fn rejects_non_positive_arguments() {
        let p = desk();
        assert!(dual_utility(0.0, 1.0, &p).is_err());
        assert!(dual_utility(1.0, -1.0, &p).is_err());
        assert!(dual_running_payoff(1.0, 0.0, &p).is_err());
        assert!(post_retirement_payoff(0.0, &p).is_err());
    }

    #[test]
    fn post_retirement_payoff_is_the_single_good_conjugate() {
        let p = desk();
        for z in [0.01, 0.3, 1.0, 40.0] {
            let c = consumption_at_leisure(z, 1.0, &p);
            let direct = utility(c, 1.0, &p) - c * z;
            assert_relative_eq!(post_retirement_payoff(z, &p).unwrap(), direct, max_relative = 1e-12);
        }
    }

    fn prefs_strategy() -> impl Strategy<Value = PreferenceParams> {
        (0.1f64..0.9, prop_oneof![0.3f64..0.9, 1.2f64..6.0], 0.2f64..0.9).prop_map(
            |(alpha, gamma, big_l)| PreferenceParams { beta: 0.04, gamma, alpha, big_l, hazard: 0.0 },
        )
    }

    proptest! {
        #[test]
        fn first_order_conditions_hold(p in prefs_strategy(), lz in -3.0f64..3.0, ly in -1.5f64..1.5) {
            let (z, y) = (10f64.powf(lz), 10f64.powf(ly));
            let r = dual_utility(z, y, &p).unwrap();
            prop_assert!(r.l_hat > 0.0 && r.l_hat <= p.big_l * (1.0 + 1e-15));
            prop_assert!(r.c_hat > 0.0);
            let uc = marginal_consumption(r.c_hat, r.l_hat, &p);
            prop_assert!(((uc - z) / z).abs() < 1e-8);
            if r.regime == Regime::InteriorLeisure {
                let ul = marginal_leisure(r.c_hat, r.l_hat, &p);
                prop_assert!(((ul - y * z) / (y * z)).abs() < 1e-8);
            } else {
                // At the cap the leisure FOC is slack in the right direction.
                prop_assert!(marginal_leisure(r.c_hat, r.l_hat, &p) >= y * z * (1.0 - 1e-12));
            }
        }

        #[test]
        fn conjugate_dominates_feasible_points(
            p in prefs_strategy(), lz in -2.0f64..2.0, ly in -1.0f64..1.0,
            c in 1e-3f64..50.0, lfrac in 1e-3f64..1.0,
        ) {
            let (z, y) = (10f64.powf(lz), 10f64.powf(ly));
            let l = lfrac * p.big_l;
            let r = dual_utility(z, y, &p).unwrap();
            let probe = utility(c, l, &p) - (c + y * l) * z;
            prop_assert!(r.value >= probe - 1e-9 * (1.0 + r.value.abs()));
        }

        #[test]
        fn payoff_power_scaling(p in prefs_strategy(), lz in -2.0f64..2.0, ly in -1.0f64..1.0, lam in 0.2f64..5.0) {
            let (z, y) = (10f64.powf(lz), 10f64.powf(ly));
            let g = p.gamma_cap();
            let base = dual_running_payoff(z, y, &p).unwrap();
            let scaled = dual_running_payoff(lam.powf(-g) * z, lam * y, &p).unwrap();
            prop_assert!((scaled - lam.powf(1.0 - g) * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }
    }

    #[test]
    fn payoff_minus_conjugate_is_income_term() {
        let p = desk();
        for (z, y) in [(0.5, 1.0), (12.0, 0.4), (3.0, 2.0)] {
            let d = dual_running_payoff(z, y, &p).unwrap() - dual_utility(z, y, &p).unwrap().value;
            assert_relative_eq!(d, y * z, max_relative = 1e-12);
        }
    }

    #[test]
    fn conjugate_is_nonincreasing_and_convex_in_z() {
        let p = desk();
        for y in [0.3, 1.0, 3.0] {
            let zs: Vec<f64> = (0..400).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 399.0)).collect();
            let v: Vec<f64> = zs.iter().map(|&z| dual_utility(z, y, &p).unwrap().value).collect();
            let pay: Vec<f64> = zs.iter().map(|&z| dual_running_payoff(z, y, &p).unwrap()).collect();
            for k in 1..zs.len() {
                assert!(v[k] <= v[k - 1] + 1e-8 * v[k - 1].abs().max(1.0));
            }
            for k in 1..zs.len() - 1 {
                // Second divided differences on the non-uniform grid.
                let convex = |f: &[f64]| {
                    let d1 = (f[k] - f[k - 1]) / (zs[k] - zs[k - 1]);
                    let d2 = (f[k + 1] - f[k]) / (zs[k + 1] - zs[k]);
                    (d2 - d1) / (zs[k + 1] - zs[k - 1])
                };
                let scale = v[k].abs().max(1.0) / (zs[k] * zs[k]);
                assert!(convex(&v) >= -1e-8 * scale);
                assert!(convex(&pay) >= -1e-8 * scale);
            }
        }
    }
}
