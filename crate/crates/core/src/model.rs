//! Model primitives and the closed-form post-retirement quantities.
//!
//! After retirement the agent faces a Merton problem with single-good power
//! utility `c^{1-Γ}/(1-Γ)`, where `Γ = 1 - α(1-γ)`. Everything here is a
//! closed form in `Γ`, `ξ` and `Θ₁ = (b-r)/σ`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, ensure_positive, Error, Result};

/// Risk-free rate, risky drift and risky volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub r: f64,
    pub b: f64,
    pub sigma: f64,
}

/// Geometric wage dynamics `dY/Y = m1 dt + m2 (ρ dB₁ + √(1-ρ²) dB₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WageParams {
    pub m1: f64,
    pub m2: f64,
    pub rho: f64,
}

/// Preferences over consumption and leisure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceParams {
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Pre-retirement leisure cap `L`.
    pub big_l: f64,
    /// Mortality hazard, added to `beta`.
    #[serde(default)]
    pub hazard: f64,
}

/// Derived constants of the post-retirement Merton problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MertonConstants {
    pub gamma_cap: f64,
    pub xi: f64,
    pub theta1: f64,
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("b", self.b), ("sigma", self.sigma)] {
            if !v.is_finite() {
                return Err(domain(format!("market.{name} must be finite, got {v}")));
            }
        }
        ensure_positive("market.sigma", self.sigma)
    }

    /// Market price of risk carried by the traded Brownian motion.
    pub fn theta1(&self) -> f64 {
        (self.b - self.r) / self.sigma
    }
}

impl WageParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m1.is_finite() && self.m2.is_finite() && self.rho.is_finite()) {
            return Err(domain("wage parameters must be finite"));
        }
        if self.m2 < 0.0 {
            return Err(domain(format!("wage.m2 must be non-negative, got {}", self.m2)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(domain(format!("wage.rho must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// `√(1-ρ²)`, clamped so that `ρ = ±1` gives exactly zero.
    pub fn rho_perp(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }

    /// Wage loading on `(B₁, B₂)`.
    pub fn mu2(&self) -> [f64; 2] {
        [self.rho * self.m2, self.rho_perp() * self.m2]
    }
}

impl PreferenceParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.beta, self.gamma, self.alpha, self.big_l, self.hazard]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(domain("preference parameters must be finite"));
        }
        if self.hazard < 0.0 {
            return Err(domain(format!("prefs.hazard must be non-negative, got {}", self.hazard)));
        }
        ensure_positive("prefs.beta + prefs.hazard", self.discount())?;
        ensure_positive("prefs.gamma", self.gamma)?;
        if self.gamma == 1.0 {
            return Err(domain("prefs.gamma = 1 (log utility) is not supported"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(domain(format!("prefs.alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.big_l > 0.0 && self.big_l < 1.0) {
            return Err(domain(format!("prefs.big_l must lie in (0, 1), got {}", self.big_l)));
        }
        Ok(())
    }

    /// Effective discount rate, mortality hazard included.
    pub fn discount(&self) -> f64 {
        self.beta + self.hazard
    }

    /// `Γ = 1 - α(1-γ)`; note `α(1-γ) - 1 = -Γ`.
    pub fn gamma_cap(&self) -> f64 {
        1.0 - self.alpha * (1.0 - self.gamma)
    }

    /// `α/(1-α)`: the consumption-to-(wage × leisure) ratio at an interior optimum.
    pub fn consumption_leisure_ratio(&self) -> f64 {
        self.alpha / (1.0 - self.alpha)
    }
}

/// Checks every parameter block and returns the Merton constants.
///
/// After retirement there is no wage to hedge, so the minimax component of
/// the market price of risk vanishes and `|Θ|² = Θ₁²` inside `ξ`.
pub fn validate_params(
    market: &MarketParams,
    wage: &WageParams,
    prefs: &PreferenceParams,
) -> Result<MertonConstants> {
    market.validate()?;
    wage.validate()?;
    prefs.validate()?;

    let gamma_cap = prefs.gamma_cap();
    if gamma_cap <= 0.0 {
        return Err(Error::WellPosedness(format!(
            "Γ = 1 - α(1-γ) must be positive, got {gamma_cap}"
        )));
    }
    let theta1 = market.theta1();
    let xi = (gamma_cap - 1.0) / gamma_cap * (market.r + theta1 * theta1 / (2.0 * gamma_cap))
        + prefs.discount() / gamma_cap;
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::WellPosedness(format!(
            "ξ = ((Γ-1)/Γ)(r + Θ₁²/(2Γ)) + β/Γ must be positive, got {xi}"
        )));
    }
    Ok(MertonConstants { gamma_cap, xi, theta1 })
}

impl MertonConstants {
    /// Exponent `(Γ-1)/Γ` of the dual value.
    pub fn dual_exponent(&self) -> f64 {
        (self.gamma_cap - 1.0) / self.gamma_cap
    }

    /// `U(w) = ξ^{-Γ} w^{1-Γ}/(1-Γ)`.
    pub fn value(&self, w: f64) -> Result<f64> {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(domain(format!("wealth must be non-negative and finite, got {w}")));
        }
        let g = self.gamma_cap;
        if w == 0.0 && g > 1.0 {
            return Err(domain("U(0) = -inf when Γ > 1"));
        }
        Ok(self.xi.powf(-g) * w.powf(1.0 - g) / (1.0 - g))
    }

    /// `U'(w) = ξ^{-Γ} w^{-Γ}`.
    pub fn marginal(&self, w: f64) -> Result<f64> {
        ensure_positive("wealth", w)?;
        Ok((self.xi * w).powf(-self.gamma_cap))
    }

    /// `Ũ(z) = Γ/(ξ(1-Γ)) z^{(Γ-1)/Γ}`.
    pub fn dual(&self, z: f64) -> Result<f64> {
        ensure_positive("shadow price z", z)?;
        Ok(self.dual_unchecked(z))
    }

    /// `Ũ'(z) = -I(z)`.
    pub fn dual_derivative(&self, z: f64) -> Result<f64> {
        Ok(-self.inverse_marginal(z)?)
    }

    /// `I(z) = ξ^{-1} z^{-1/Γ}`, the inverse of `U'`.
    pub fn inverse_marginal(&self, z: f64) -> Result<f64> {
        ensure_positive("shadow price z", z)?;
        Ok(self.inverse_marginal_unchecked(z))
    }

    pub(crate) fn dual_unchecked(&self, z: f64) -> f64 {
        let g = self.gamma_cap;
        g / (self.xi * (1.0 - g)) * z.powf(self.dual_exponent())
    }

    pub(crate) fn inverse_marginal_unchecked(&self, z: f64) -> f64 {
        z.powf(-1.0 / self.gamma_cap) / self.xi
    }
}

pub fn merton_value(w: f64, mc: &MertonConstants) -> Result<f64> {
    mc.value(w)
}

pub fn merton_dual(z: f64, mc: &MertonConstants) -> Result<f64> {
    mc.dual(z)
}

pub fn inverse_marginal(z: f64, mc: &MertonConstants) -> Result<f64> {
    mc.inverse_marginal(z)
}

/// Shadow price `z̃(y)` below which the leisure cap binds.
pub fn leisure_threshold(y: f64, prefs: &PreferenceParams) -> Result<f64> {
    ensure_positive("wage y", y)?;
    Ok(leisure_threshold_unchecked(y, prefs))
}

pub(crate) fn leisure_threshold_unchecked(y: f64, prefs: &PreferenceParams) -> f64 {
    let exponent = prefs.alpha * (1.0 - prefs.gamma) - 1.0;
    (prefs.consumption_leisure_ratio() * y).powf(exponent) * prefs.big_l.powf(-prefs.gamma)
}

/// Fully validated parameter set shared by the solver, the primal recovery
/// and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub market: MarketParams,
    pub wage: WageParams,
    pub prefs: PreferenceParams,
    pub merton: MertonConstants,
}

impl ModelParams {
    pub fn new(market: MarketParams, wage: WageParams, prefs: PreferenceParams) -> Result<Self> {
        let merton = validate_params(&market, &wage, &prefs)?;
        Ok(Self { market, wage, prefs, merton })
    }

    /// Same model with a different wage/asset correlation.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.market, WageParams { rho, ..self.wage }, self.prefs)
    }

    pub fn beta(&self) -> f64 {
        self.prefs.discount()
    }

    /// Parameters used throughout the examples and the acceptance suite.
    pub fn baseline() -> Self {
        Self::new(
            MarketParams { r: 0.03, b: 0.07, sigma: 0.2 },
            WageParams { m1: 0.01, m2: 0.1, rho: 0.5 },
            PreferenceParams { beta: 0.04, gamma: 3.0, alpha: 0.5, big_l: 0.5, hazard: 0.0 },
        )
        .expect("baseline parameters are well posed")
    }
}
