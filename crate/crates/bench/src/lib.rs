//! Fixtures shared by the criterion benches.

use shadowprice_core::{DualGrid, ModelParams, SimSpec};

/// The square baseline grid the tests and the CLI default to.
pub fn baseline_grid(n: usize) -> DualGrid {
    DualGrid::baseline(&ModelParams::baseline(), n, n).expect("valid bench grid")
}

pub fn sim_spec(n_paths: usize, n_steps: usize, dt: f64) -> SimSpec {
    SimSpec { n_paths, n_steps, dt, seed: 1, s0: 1.0, y0: 1.0, sequential: false }
}
