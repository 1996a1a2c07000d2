//! Primal quantities recovered from a solved dual field: the value function
//! through the multiplier minimization, optimal consumption and leisure,
//! and the retirement boundary in wealth units.
//!
//! The multiplier `λ*` minimizes `Φ(λ, y₀) + λ w₀`, so wealth is identified
//! with `-Φ_z` at the optimum (the usual dual-to-primal map).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::conjugate::dual_utility_unchecked;
use crate::error::{domain, ensure_positive, Error, Result};
use crate::fbsolver::{classify_regions, NodeRegion, PayoffKind, SolutionField, TopologyWarning};

/// Optimal consumption and leisure on the grid nodes, indexed `[[iz, iy]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFields {
    pub consumption: Array2<f64>,
    pub leisure: Array2<f64>,
}

/// Retirement wealth on one wage row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryWealth {
    pub y: f64,
    pub z_star: f64,
    /// `I(z*)`: wealth at which the retired value takes over.
    pub w_star_i: f64,
    /// `-Φ_z(z*, y)` from the solved field.
    pub w_star_grad: f64,
}

impl BoundaryWealth {
    /// Smooth-pasting gap `|I(z*) + Φ_z(z*)|`.
    pub fn gap(&self) -> f64 {
        (self.w_star_i - self.w_star_grad).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetirementBoundary {
    pub points: Vec<BoundaryWealth>,
    pub warnings: Vec<TopologyWarning>,
}

impl RetirementBoundary {
    /// `z*(y)`, linear in `(ln y, ln z)` between resolved rows; `None`
    /// outside them.
    pub fn z_star_at(&self, y: f64) -> Option<f64> {
        let k = self.points.partition_point(|p| p.y < y);
        if k < self.points.len() && self.points[k].y == y {
            return Some(self.points[k].z_star);
        }
        if k == 0 || k == self.points.len() {
            return None;
        }
        let (a, b) = (&self.points[k - 1], &self.points[k]);
        let t = (y.ln() - a.y.ln()) / (b.y.ln() - a.y.ln());
        Some((a.z_star.ln() + t * (b.z_star.ln() - a.z_star.ln())).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub w0: f64,
    pub y0: f64,
    /// `V(w₀, y₀) = Φ(λ*, y₀) + λ* w₀`, with `Φ` from [`hermite_phi`].
    pub value: f64,
    pub lambda_star: f64,
    /// Retiring at once is optimal: `(λ*, y₀)` lies in the stopped region.
    pub retire_now: bool,
    /// Initial consumption and leisure at `(λ*, y₀)`.
    pub consumption: f64,
    pub leisure: f64,
    pub policy: PolicyFields,
    /// `W(z, y) = -Φ_z`.
    pub wealth_map: Array2<f64>,
    pub retire_boundary: RetirementBoundary,
}

/// Wealth `-Φ_z` along the wage slice `y`, linear in `ln y` between rows.
fn wealth_slice(field: &SolutionField, y: f64) -> Result<Vec<f64>> {
    let (iy, ty) = field
        .grid
        .locate_y(y)
        .ok_or_else(|| Error::Range(format!("y = {y} outside the solved grid")))?;
    Ok((0..field.nz())
        .map(|iz| -((1.0 - ty) * field.d_z[[iz, iy]] + ty * field.d_z[[iz, iy + 1]]))
        .collect())
}

/// `Φ(z, y)` by cubic Hermite interpolation in `ln z` (values and `zΦ_z` at
/// the cell ends), linear in `ln y` between rows.
pub fn hermite_phi(field: &SolutionField, z: f64, y: f64) -> Result<f64> {
    let (iz, t) = field
        .grid
        .locate_z(z)
        .ok_or_else(|| Error::Range(format!("z = {z} outside the solved grid")))?;
    let (iy, ty) = field
        .grid
        .locate_y(y)
        .ok_or_else(|| Error::Range(format!("y = {y} outside the solved grid")))?;
    let h = field.grid.hx();
    let (z0, z1) = (field.grid.z_nodes[iz], field.grid.z_nodes[iz + 1]);
    let row = |j: usize| {
        let (p0, p1) = (field.phi[[iz, j]], field.phi[[iz + 1, j]]);
        let (m0, m1) = (h * z0 * field.d_z[[iz, j]], h * z1 * field.d_z[[iz + 1, j]]);
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1
    };
    Ok((1.0 - ty) * row(iy) + ty * row(iy + 1))
}

/// Solves `-Φ_z(λ, y₀) = w₀` by bisection over the slice nodes followed by
/// linear interpolation in `ln z` inside the bracketing cell.
pub fn multiplier(field: &SolutionField, w0: f64, y0: f64) -> Result<f64> {
    let w = wealth_slice(field, y0)?;
    let n = w.len();
    let (w_hi, w_lo) = (w[0], w[n - 1]);
    if !(w0 <= w_hi && w0 >= w_lo) {
        return Err(Error::Range(format!(
            "initial wealth {w0} outside [{w_lo}, {w_hi}] covered by the grid at y = {y0}"
        )));
    }
    let z = &field.grid.z_nodes;
    // Invariant: w[lo] >= w0 >= w[hi].
    let (mut lo, mut hi) = (0, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if w[mid] >= w0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if w[lo] == w0 {
        return Ok(z[lo]);
    }
    if w[hi] == w0 {
        return Ok(z[hi]);
    }
    let t = (w[lo] - w0) / (w[lo] - w[hi]);
    Ok((z[lo].ln() + t * (z[hi].ln() - z[lo].ln())).exp())
}

/// Value function and multiplier at `(w₀, y₀)`, with the policy fields,
/// wealth map and retirement boundary of the field.
pub fn primal_value(w0: f64, y0: f64, field: &SolutionField) -> Result<PrimalSolution> {
    if !(w0 >= 0.0 && w0.is_finite()) {
        return Err(domain(format!("initial wealth must be finite and non-negative, got {w0}")));
    }
    ensure_positive("initial wage", y0)?;
    let lambda_star = multiplier(field, w0, y0)?;
    let phi = hermite_phi(field, lambda_star, y0)?;
    let retire_boundary = retirement_boundary_wealth(field);
    let retire_now = match field.problem.payoff {
        PayoffKind::Retired => true,
        PayoffKind::Working if !field.problem.stopping => false,
        PayoffKind::Working => match retire_boundary.z_star_at(y0) {
            Some(z_star) => lambda_star <= z_star,
            None => {
                let obstacle = field.params.merton.dual_unchecked(lambda_star);
                let payoff = field.interpolate(&field.payoff, lambda_star, y0)?;
                let scale = obstacle.abs() + payoff.abs() / field.params.beta();
                phi - obstacle <= field.config.residual_tol * scale
            }
        },
    };
    let (consumption, leisure) = node_policy(field, lambda_star, y0, retire_now);
    Ok(PrimalSolution {
        w0,
        y0,
        value: phi + lambda_star * w0,
        lambda_star,
        retire_now,
        consumption,
        leisure,
        policy: recover_policy(field),
        wealth_map: field.d_z.mapv(|d| -d),
        retire_boundary,
    })
}

/// Consumption and leisure at shadow price `z`: the conjugate maximizers
/// while working, `(ξ I(z), 1)` once retired.
fn node_policy(field: &SolutionField, z: f64, y: f64, retired: bool) -> (f64, f64) {
    if retired {
        let mc = field.params.merton;
        (mc.xi * mc.inverse_marginal_unchecked(z), 1.0)
    } else {
        let r = dual_utility_unchecked(z, y, &field.params.prefs);
        (r.c_hat, r.l_hat)
    }
}

/// Optimal consumption and leisure at every node.
///
/// Continuation and liquidity-bound nodes use the conjugate maximizers, with
/// the node's `z` as the marginal utility of consumption. Stopped nodes, and
/// every node of a post-retirement field, use leisure one and the Merton
/// consumption `ξ I(z)`.
pub fn recover_policy(field: &SolutionField) -> PolicyFields {
    let (nz, ny) = (field.nz(), field.ny());
    let retired = field.problem.payoff == PayoffKind::Retired;
    let pairs = Array2::from_shape_fn((nz, ny), |(i, j)| {
        let stopped = retired || field.region[[i, j]] == NodeRegion::Stopped;
        node_policy(field, field.grid.z_nodes[i], field.grid.y_nodes[j], stopped)
    });
    PolicyFields { consumption: pairs.mapv(|p| p.0), leisure: pairs.mapv(|p| p.1) }
}

/// Retirement boundary `W*(y) = I(z*(y))` on every row where `z*` is
/// resolved, with the smooth-pasting cross-check `-Φ_z(z*, y)`.
/// Empty when the obstacle is disabled.
pub fn retirement_boundary_wealth(field: &SolutionField) -> RetirementBoundary {
    if !field.problem.stopping {
        return RetirementBoundary::default();
    }
    let map = classify_regions(field, field.config.residual_tol);
    let mc = field.params.merton;
    let points = map
        .boundary
        .iter()
        .map(|b| {
            let (iz, t) = field.grid.locate_z(b.z_star).expect("boundary lies on the grid");
            let dz = (1.0 - t) * field.d_z[[iz, b.iy]] + t * field.d_z[[iz + 1, b.iy]];
            BoundaryWealth {
                y: b.y,
                z_star: b.z_star,
                w_star_i: mc.inverse_marginal_unchecked(b.z_star),
                w_star_grad: -dz,
            }
        })
        .collect();
    RetirementBoundary { points, warnings: map.warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::marginal_consumption;
    use crate::fbsolver::{solve, DualGrid, ProblemSpec, SolverConfig};
    use crate::model::ModelParams;
    use approx::assert_relative_eq;

    fn field(problem: ProblemSpec) -> SolutionField {
        let p = ModelParams::baseline();
        let g = DualGrid::baseline(&p, 48, 32).unwrap();
        solve(&g, &p, problem, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn node_wealth_returns_node_multiplier() {
        let f = field(ProblemSpec::full());
        let j = f.ny() / 2;
        let y0 = f.grid.y_nodes[j];
        for i in [5, 12, 20] {
            let w0 = f.wealth(i, j);
            let sol = primal_value(w0, y0, &f).unwrap();
            assert_relative_eq!(sol.lambda_star, f.grid.z_nodes[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn value_is_an_infimum_over_probes() {
        let f = field(ProblemSpec::full());
        let y0 = 1.0;
        let sol = primal_value(20.0, y0, &f).unwrap();
        let (lo, hi) = f.grid.z_range();
        for k in 0..50 {
            let lam = (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / 49.0).exp();
            let bound = hermite_phi(&f, lam, y0).unwrap() + lam * sol.w0;
            assert!(sol.value <= bound + 1e-6 * bound.abs(), "λ={lam}");
        }
    }

    #[test]
    fn merton_slice_reproduces_closed_form_value() {
        let f = field(ProblemSpec::merton());
        for w0 in [1.0, 10.0, 50.0] {
            let sol = primal_value(w0, 1.0, &f).unwrap();
            let exact = f.params.merton.value(w0).unwrap();
            assert_relative_eq!(sol.value, exact, max_relative = 5e-3);
            assert!(sol.retire_now);
            assert_eq!(sol.leisure, 1.0);
        }
    }

    #[test]
    fn out_of_range_wealth_is_rejected() {
        let f = field(ProblemSpec::full());
        assert!(matches!(primal_value(1e9, 1.0, &f), Err(Error::Range(_))));
        assert!(matches!(primal_value(1.0, 1e6, &f), Err(Error::Range(_))));
        assert!(matches!(primal_value(-1.0, 1.0, &f), Err(Error::Domain(_))));
    }

    #[test]
    fn policies_satisfy_first_order_condition() {
        let f = field(ProblemSpec::full());
        let pol = recover_policy(&f);
        for ((i, j), &c) in pol.consumption.indexed_iter() {
            let l = pol.leisure[[i, j]];
            let z = f.grid.z_nodes[i];
            assert!(l > 0.0 && c > 0.0);
            let mu = marginal_consumption(c, l, &f.params.prefs);
            assert_relative_eq!(mu, z, max_relative = 1e-8);
            match f.region[[i, j]] {
                NodeRegion::Stopped => assert_eq!(l, 1.0),
                _ => assert!(l <= f.params.prefs.big_l + 1e-15),
            }
        }
    }

    #[test]
    fn boundary_empty_without_obstacle() {
        let f = field(ProblemSpec { stopping: false, ..ProblemSpec::full() });
        assert!(retirement_boundary_wealth(&f).points.is_empty());
    }
}
