//! Free-boundary solver for the stationary dual variational inequality.
//!
//! At every interior node of a `(z, y)` grid the discrete system
//!
//! ```text
//! max{ Ũ(z) - Φ,  min{ LΦ + f,  -Φ_z } } = 0
//! ```
//!
//! is solved: retirement pays `Ũ(z)`, working pays the running reward `f`
//! and the no-borrowing constraint keeps the implied wealth `-Φ_z` non-negative.
//! The incompleteness term is a minimum over the orthogonal price of risk
//! `θ₂`. It is handled by policy iteration: `θ₂` is chosen per node to
//! minimize the discrete operator at the current iterate, then frozen while
//! projected relaxation sweeps solve the resulting linear complementarity
//! problem.

mod grid;
pub mod operator;
mod regions;
mod solve;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub use grid::{DualGrid, BASELINE_Y_RANGE, MIN_NODES};
pub use operator::{minimax_objective, minimax_v, stationary_operator, LocalJet, MinimaxValue, OperatorValue};
pub use regions::{classify_regions, BoundaryPoint, RegionMap, TopologyWarning};
pub use solve::solve;

/// Which running reward the dual value collects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayoffKind {
    /// Pre-retirement reward `ũ(z, y) + y z` with the liquidity constraint active.
    Working,
    /// Post-retirement reward `sup_c u(c, 1) - c z`; no wage, no liquidity constraint.
    Retired,
}

/// What is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub payoff: PayoffKind,
    /// Retirement obstacle `Φ ≥ Ũ(z)`.
    pub stopping: bool,
    /// Include the minimax incompleteness term. Without it the operator is
    /// the complete-market one with the same `ρΘ₁` cross term.
    pub minimax: bool,
}

impl ProblemSpec {
    pub fn full() -> Self {
        Self { payoff: PayoffKind::Working, stopping: true, minimax: true }
    }

    /// Post-retirement Merton problem; its exact solution is `Ũ(z)`.
    pub fn merton() -> Self {
        Self { payoff: PayoffKind::Retired, stopping: false, minimax: false }
    }

    pub fn liquidity(&self) -> bool {
        self.payoff == PayoffKind::Working
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sup-norm tolerance (scaled) on sweep updates and on outer iterates.
    pub tol: f64,
    /// Cap on `θ₂`-freezing iterations.
    pub max_outer: usize,
    /// Cap on projected sweeps per frozen problem.
    pub max_inner: usize,
    /// Over-relaxation factor in `(0, 2)`.
    pub relaxation: f64,
    /// Relative floor on `z²Φ_zz` inside the incompleteness term.
    pub hess_floor: f64,
    /// Bound on `|θ₂|` used in the frozen coefficients.
    pub theta2_cap: f64,
    /// Scaled complementarity residual required at exit.
    pub residual_tol: f64,
    /// Sweep rows on a single thread. Results are identical either way.
    pub sequential: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_outer: 60,
            max_inner: 200_000,
            relaxation: 1.7,
            hess_floor: 1e-10,
            theta2_cap: 10.0,
            residual_tol: 1e-7,
            sequential: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.hess_floor > 0.0 && self.residual_tol > 0.0) {
            return Err(Error::Domain("tol, hess_floor and residual_tol must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::Domain(format!("relaxation must lie in (0, 2), got {}", self.relaxation)));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Domain("iteration caps must be positive".into()));
        }
        if !(self.theta2_cap > 0.0) {
            return Err(Error::Domain("theta2_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRegion {
    /// Retirement obstacle active: `Φ = Ũ(z)`.
    Stopped,
    /// Gradient constraint active: `-Φ_z = 0`, zero wealth.
    LiquidityBound,
    Continuation,
}

impl NodeRegion {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeRegion::Stopped => "stopped",
            NodeRegion::LiquidityBound => "liquidity",
            NodeRegion::Continuation => "continuation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub last_outer_change: f64,
    pub max_residual: f64,
    pub worst_node: (usize, usize),
    /// Nodes where `z²Φ_zz` hit the floor in the incompleteness term.
    pub floored_nodes: Vec<(usize, usize)>,
    /// Interior nodes whose frozen stencil has a negative off-diagonal weight.
    pub non_monotone_nodes: usize,
    /// Relaxation factor in use at the end, below the configured one if
    /// divergence forced a reduction.
    pub final_relaxation: f64,
}

/// Converged dual value with derivatives and region labels.
///
/// All arrays have shape `(nz, ny)` and are indexed `[[iz, iy]]`.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub grid: DualGrid,
    pub params: ModelParams,
    pub problem: ProblemSpec,
    pub config: SolverConfig,
    pub phi: Array2<f64>,
    /// Central differences, one-sided on edges; `d_zy` at interior nodes
    /// is the seven-point cross difference of the stencil in use there.
    pub d_z: Array2<f64>,
    pub d_y: Array2<f64>,
    pub d_zz: Array2<f64>,
    pub d_yy: Array2<f64>,
    pub d_zy: Array2<f64>,
    pub region: Array2<NodeRegion>,
    pub theta2: Array2<f64>,
    /// Scaled complementarity residual per node (zero on edges).
    pub residual: Array2<f64>,
    /// Running reward `f(z, y)`.
    pub payoff: Array2<f64>,
    /// Node scale `|Ũ(z)| + |f|/β` used to make tolerances relative.
    pub scale: Array2<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl SolutionField {
    pub fn nz(&self) -> usize {
        self.grid.nz
    }

    pub fn ny(&self) -> usize {
        self.grid.ny
    }

    pub fn jet(&self, iz: usize, iy: usize) -> LocalJet {
        LocalJet {
            phi: self.phi[[iz, iy]],
            d_z: self.d_z[[iz, iy]],
            d_y: self.d_y[[iz, iy]],
            d_zz: self.d_zz[[iz, iy]],
            d_yy: self.d_yy[[iz, iy]],
            d_zy: self.d_zy[[iz, iy]],
        }
    }

    /// Pointwise operator residual from the finite-difference derivative fields.
    pub fn operator_at(&self, iz: usize, iy: usize) -> OperatorValue {
        let (z, y) = (self.grid.z_nodes[iz], self.grid.y_nodes[iy]);
        stationary_operator(
            &self.jet(iz, iy),
            z,
            y,
            &self.params,
            self.payoff[[iz, iy]],
            self.config.hess_floor * self.scale[[iz, iy]],
            self.problem.minimax,
        )
    }

    pub fn minimax_at(&self, iz: usize, iy: usize) -> MinimaxValue {
        let (z, y) = (self.grid.z_nodes[iz], self.grid.y_nodes[iy]);
        minimax_v(&self.jet(iz, iy), z, y, &self.params, self.config.hess_floor * self.scale[[iz, iy]])
    }

    /// Bilinear interpolation in `(ln z, ln y)`.
    pub fn interpolate(&self, values: &Array2<f64>, z: f64, y: f64) -> Result<f64> {
        let (iz, tz) = self
            .grid
            .locate_z(z)
            .ok_or_else(|| Error::Range(format!("z = {z} outside the solved grid")))?;
        let (iy, ty) = self
            .grid
            .locate_y(y)
            .ok_or_else(|| Error::Range(format!("y = {y} outside the solved grid")))?;
        let v00 = values[[iz, iy]];
        let v10 = values[[iz + 1, iy]];
        let v01 = values[[iz, iy + 1]];
        let v11 = values[[iz + 1, iy + 1]];
        Ok((1.0 - tz) * ((1.0 - ty) * v00 + ty * v01) + tz * ((1.0 - ty) * v10 + ty * v11))
    }

    pub fn phi_at(&self, z: f64, y: f64) -> Result<f64> {
        self.interpolate(&self.phi, z, y)
    }

    /// Implied wealth `-Φ_z` at a node.
    pub fn wealth(&self, iz: usize, iy: usize) -> f64 {
        -self.d_z[[iz, iy]]
    }

    /// Dual value along a wage slice, linearly interpolated in `ln y`.
    pub fn slice_at_y(&self, y: f64) -> Result<Vec<f64>> {
        let (iy, ty) = self
            .grid
            .locate_y(y)
            .ok_or_else(|| Error::Range(format!("y = {y} outside the solved grid")))?;
        Ok((0..self.nz())
            .map(|iz| (1.0 - ty) * self.phi[[iz, iy]] + ty * self.phi[[iz, iy + 1]])
            .collect())
    }

    pub fn count_region(&self, which: NodeRegion) -> usize {
        self.region.iter().filter(|&&r| r == which).count()
    }

    /// Scaled sup-norm distance to another field on the same grid.
    pub fn scaled_distance(&self, other: &SolutionField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Domain("fields live on different grids".into()));
        }
        Ok(self
            .phi
            .indexed_iter()
            .map(|(ix, &v)| (v - other.phi[ix]).abs() / self.scale[ix])
            .fold(0.0, f64::max))
    }
}
