//! Dual shadow-price solver for optimal consumption, leisure and retirement
//! when the wage cannot be fully hedged.
//!
//! * [`model`]: parameters and the post-retirement Merton closed forms.
//! * [`conjugate`]: the consumption–leisure conjugate `ũ(z, y)`.
//! * [`fbsolver`]: the free-boundary variational inequality on a `(z, y)` grid.
//! * [`primal`]: value function, policies and retirement wealth from the dual field.
//! * [`simcheck`]: Monte Carlo checks of kernel identities and weak duality.

pub mod conjugate;
pub mod error;
pub mod fbsolver;
pub mod model;
pub mod primal;
pub mod simcheck;

pub use conjugate::{dual_running_payoff, dual_utility, ConjugateResult, Regime};
pub use error::{Error, Result};
pub use fbsolver::{
    classify_regions, solve, DualGrid, NodeRegion, PayoffKind, ProblemSpec, SolutionField,
    SolverConfig,
};
pub use model::{
    inverse_marginal, leisure_threshold, merton_dual, merton_value, validate_params,
    MarketParams, MertonConstants, ModelParams, PreferenceParams, WageParams,
};
pub use primal::{
    hermite_phi, multiplier, primal_value, recover_policy, retirement_boundary_wealth, BoundaryWealth, PolicyFields,
    PrimalSolution, RetirementBoundary,
};
pub use simcheck::{
    budget_check, duality_gap, evaluate, lambda_grid, simulate, BudgetReport, ConsumptionRule, DualityGapReport,
    Estimate, LeisureRule, PathBundle, RiskyRule, SimSpec, StoppingRule, StrategyOutcome, StrategySpec,
};
