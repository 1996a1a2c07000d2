//! One-dimensional cuts through a solved field for plotting.

use serde::Serialize;
use shadowprice_core::{leisure_threshold, recover_policy, Error, NodeRegion, SolutionField};

use crate::config::SliceAxis;
use crate::error::RunResult;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceRow {
    pub z: f64,
    pub y: f64,
    pub phi: f64,
    pub phi_z: f64,
    pub wealth: f64,
    pub consumption: f64,
    pub leisure: f64,
    /// Region of the nearest grid line.
    pub region: &'static str,
    /// Leisure regime of the conjugate: `interior` above `z̃(y)`, `capped` below.
    pub regime: &'static str,
    pub z_tilde: f64,
}

/// Cut at fixed `y` (one row per z node) or fixed `z` (one row per y node).
/// Values are interpolated linearly in the log of the fixed coordinate.
pub fn export_slice(field: &SolutionField, axis: SliceAxis, value: f64) -> RunResult<Vec<SliceRow>> {
    let policy = recover_policy(field);
    let prefs = &field.params.prefs;
    let out_of_range = || Error::Range(format!("slice {axis:?} = {value} outside the solved grid"));
    if !(value > 0.0 && value.is_finite()) {
        return Err(out_of_range().into());
    }
    let nearest = |nodes: &[f64]| {
        (0..nodes.len())
            .min_by(|&a, &b| (nodes[a].ln() - value.ln()).abs().total_cmp(&(nodes[b].ln() - value.ln()).abs()))
            .expect("non-empty grid")
    };
    let row = |z: f64, y: f64, region: NodeRegion| -> RunResult<SliceRow> {
        let phi_z = field.interpolate(&field.d_z, z, y)?;
        let z_tilde = leisure_threshold(y, prefs)?;
        Ok(SliceRow {
            z,
            y,
            phi: field.interpolate(&field.phi, z, y)?,
            phi_z,
            wealth: -phi_z,
            consumption: field.interpolate(&policy.consumption, z, y)?,
            leisure: field.interpolate(&policy.leisure, z, y)?,
            region: region.as_str(),
            regime: if z >= z_tilde { "interior" } else { "capped" },
            z_tilde,
        })
    };
    let (lo, hi) = match axis {
        SliceAxis::Y => field.grid.y_range(),
        SliceAxis::Z => field.grid.z_range(),
    };
    if value < lo || value > hi {
        return Err(out_of_range().into());
    }
    match axis {
        SliceAxis::Y => {
            let j = nearest(&field.grid.y_nodes);
            field.grid.z_nodes.iter().enumerate().map(|(i, &z)| row(z, value, field.region[[i, j]])).collect()
        }
        SliceAxis::Z => {
            let i = nearest(&field.grid.z_nodes);
            field.grid.y_nodes.iter().enumerate().map(|(j, &y)| row(value, y, field.region[[i, j]])).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shadowprice_core::{solve, DualGrid, ModelParams, ProblemSpec, SolverConfig};

    fn field(problem: ProblemSpec) -> SolutionField {
        let p = ModelParams::baseline();
        let g = DualGrid::baseline(&p, 48, 32).unwrap();
        solve(&g, &p, problem, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn slice_at_fixed_wage_has_one_row_per_z_node_and_one_regime_flip() {
        let f = field(ProblemSpec::full());
        let rows = export_slice(&f, SliceAxis::Y, 1.3).unwrap();
        assert_eq!(rows.len(), f.nz());
        let flips: Vec<usize> = (1..rows.len()).filter(|&k| rows[k].regime != rows[k - 1].regime).collect();
        assert_eq!(flips.len(), 1);
        let k = flips[0];
        assert!(rows[k - 1].z < rows[k].z_tilde && rows[k].z_tilde <= rows[k].z);
    }

    #[test]
    fn slice_at_fixed_shadow_price_has_one_row_per_wage_node() {
        let f = field(ProblemSpec::full());
        assert_eq!(export_slice(&f, SliceAxis::Z, 3.0).unwrap().len(), f.ny());
    }

    #[test]
    fn merton_slice_matches_the_closed_form() {
        let f = field(ProblemSpec::merton());
        let mc = f.params.merton;
        for r in export_slice(&f, SliceAxis::Y, 2.0).unwrap() {
            let u = mc.dual(r.z).unwrap();
            assert!((r.phi - u).abs() <= 2e-3 * u.abs(), "z = {}", r.z);
        }
    }

    #[test]
    fn out_of_range_requests_are_range_errors() {
        let f = field(ProblemSpec::full());
        let e = export_slice(&f, SliceAxis::Y, 1e6).unwrap_err();
        assert_eq!(e.category, crate::error::Category::Range);
    }
}
