//! The stationary dual operator and its discretization.
//!
//! With `φ(t, z, y) = e^{-βt} Φ(z, y)` the dual value solves, wherever the
//! agent keeps working and the liquidity constraint is slack,
//!
//! ```text
//! 0 = -βΦ + (β-r) zΦ_z + m1 yΦ_y + ½m2² y²Φ_yy + ½Θ₁² z²Φ_zz - ρΘ₁m2 zyΦ_zy
//!     - ½(1-ρ²) m2² (zyΦ_zy)² / (z²Φ_zz) + f(z, y)
//! ```
//!
//! The last term is what is left of `min_v ½|Θ(v)|² z²Φ_zz - Θ(v)·μ₂ zyΦ_zy`
//! over `v = [0; θ₂]` once the orthogonal component is optimized. In
//! `x = ln z`, `s = ln y` every coefficient is constant.

use crate::model::ModelParams;

/// Value and first/second derivatives of `Φ` at one point, in `(z, y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LocalJet {
    pub phi: f64,
    pub d_z: f64,
    pub d_y: f64,
    pub d_zz: f64,
    pub d_yy: f64,
    pub d_zy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorValue {
    pub residual: f64,
    /// `z²Φ_zz` fell below the floor and was replaced by it.
    pub floored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimaxValue {
    pub theta2: f64,
    pub floored: bool,
}

/// `z²Φ_zz`, floored. Returns the value used and whether the floor applied.
fn floored_curvature(jet: &LocalJet, z: f64, floor: f64) -> (f64, bool) {
    let curv = z * z * jet.d_zz;
    if curv < floor {
        (floor, true)
    } else {
        (curv, false)
    }
}

/// Pointwise stationary operator plus running payoff.
///
/// `floor` bounds `z²Φ_zz` from below inside the incompleteness term.
/// With `minimax = false` that term is dropped (complete-market operator
/// with the same `ρΘ₁` cross term).
pub fn stationary_operator(
    jet: &LocalJet,
    z: f64,
    y: f64,
    params: &ModelParams,
    payoff: f64,
    floor: f64,
    minimax: bool,
) -> OperatorValue {
    let beta = params.beta();
    let r = params.market.r;
    let theta1 = params.merton.theta1;
    let w = &params.wage;
    let zy_cross = z * y * jet.d_zy;
    let mut residual = -beta * jet.phi
        + (beta - r) * z * jet.d_z
        + w.m1 * y * jet.d_y
        + 0.5 * w.m2 * w.m2 * y * y * jet.d_yy
        + 0.5 * theta1 * theta1 * z * z * jet.d_zz
        - w.rho * theta1 * w.m2 * zy_cross
        + payoff;
    let mut floored = false;
    if minimax {
        let (curv, f) = floored_curvature(jet, z, floor);
        floored = f;
        let perp = w.rho_perp();
        residual -= 0.5 * perp * perp * w.m2 * w.m2 * zy_cross * zy_cross / curv;
    }
    OperatorValue { residual, floored }
}

/// Orthogonal market-price-of-risk component of the minimax measure:
/// `θ₂ = √(1-ρ²) m2 · zyΦ_zy / z²Φ_zz`.
pub fn minimax_v(jet: &LocalJet, z: f64, y: f64, params: &ModelParams, floor: f64) -> MinimaxValue {
    let (curv, floored) = floored_curvature(jet, z, floor);
    let theta2 = params.wage.rho_perp() * params.wage.m2 * z * y * jet.d_zy / curv;
    MinimaxValue { theta2, floored }
}

/// The quadratic minimized by [`minimax_v`]:
/// `½|Θ(v)|² z²Φ_zz - Θ(v)·μ₂ zyΦ_zy` with `Θ(v) = [Θ₁; θ₂]`.
pub fn minimax_objective(theta2: f64, jet: &LocalJet, z: f64, y: f64, params: &ModelParams) -> f64 {
    let theta1 = params.merton.theta1;
    let [mu_a, mu_b] = params.wage.mu2();
    0.5 * (theta1 * theta1 + theta2 * theta2) * z * z * jet.d_zz
        - (theta1 * mu_a + theta2 * mu_b) * z * y * jet.d_zy
}

/// Nine-point weights of the discrete operator at one node; the update
/// target is `(Σ weight·Φ_neighbour + f) / diag`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Stencil {
    pub e: f64,
    pub w: f64,
    pub n: f64,
    pub s: f64,
    pub ne: f64,
    pub sw: f64,
    pub nw: f64,
    pub se: f64,
    pub diag: f64,
    /// All off-diagonal weights are non-negative.
    pub monotone: bool,
}

/// Frozen-coefficient operator in log coordinates:
/// `-βΦ + dx Φ_x + ds Φ_s + a Φ_xx + b Φ_ss + c Φ_xs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogCoefficients {
    pub beta: f64,
    pub dx: f64,
    pub ds: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LogCoefficients {
    /// Coefficients with the orthogonal price of risk frozen at `theta2`.
    pub fn frozen(params: &ModelParams, theta2: f64) -> Self {
        let beta = params.beta();
        let theta1 = params.merton.theta1;
        let w = &params.wage;
        let a = 0.5 * (theta1 * theta1 + theta2 * theta2);
        let b = 0.5 * w.m2 * w.m2;
        let [mu_a, mu_b] = w.mu2();
        Self {
            beta,
            dx: beta - params.market.r - a,
            ds: w.m1 - b,
            a,
            b,
            c: -(theta1 * mu_a + theta2 * mu_b),
        }
    }

    /// Seven-point cross stencil along the diagonal matching the sign of
    /// `c`, with central first-order terms.
    pub fn stencil(&self, hx: f64, hs: f64) -> Stencil {
        let mut st = Stencil { diag: self.beta, ..Stencil::default() };
        let ax = self.a / (hx * hx);
        let bs = self.b / (hs * hs);
        st.e += ax;
        st.w += ax;
        st.diag += 2.0 * ax;
        st.n += bs;
        st.s += bs;
        st.diag += 2.0 * bs;

        let cross = self.c.abs() / (2.0 * hx * hs);
        if self.c >= 0.0 {
            st.ne += cross;
            st.sw += cross;
        } else {
            st.nw += cross;
            st.se += cross;
        }
        st.e -= cross;
        st.w -= cross;
        st.n -= cross;
        st.s -= cross;
        st.diag -= 2.0 * cross;

        // Central first-order terms keep the stencil's dependence on θ₂
        // quadratic, so the ratio formula is its exact minimizer.
        st.e += self.dx / (2.0 * hx);
        st.w -= self.dx / (2.0 * hx);
        st.n += self.ds / (2.0 * hs);
        st.s -= self.ds / (2.0 * hs);
        st.monotone = [st.e, st.w, st.n, st.s, st.ne, st.sw, st.nw, st.se]
            .iter()
            .all(|&v| v >= 0.0);
        st
    }
}
