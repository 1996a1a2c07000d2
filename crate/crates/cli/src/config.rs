//! Run configuration: sectioned TOML on disk, or the JSON echo stored in a
//! previous `summary.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shadowprice_core::{
    ConsumptionRule, DualGrid, LeisureRule, MarketParams, ModelParams, PayoffKind, PreferenceParams, ProblemSpec,
    RiskyRule, SimSpec, SolverConfig, StoppingRule, StrategySpec, WageParams,
};

use crate::error::{RunError, RunResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub r: f64,
    pub b: f64,
    pub sigma: f64,
    pub m1: f64,
    pub m2: f64,
    pub rho: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub big_l: f64,
    pub hazard: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::baseline();
        Self {
            r: p.market.r,
            b: p.market.b,
            sigma: p.market.sigma,
            m1: p.wage.m1,
            m2: p.wage.m2,
            rho: p.wage.rho,
            beta: p.prefs.beta,
            gamma: p.prefs.gamma,
            alpha: p.prefs.alpha,
            big_l: p.prefs.big_l,
            hazard: p.prefs.hazard,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> RunResult<ModelParams> {
        Ok(ModelParams::new(
            MarketParams { r: self.r, b: self.b, sigma: self.sigma },
            WageParams { m1: self.m1, m2: self.m2, rho: self.rho },
            PreferenceParams {
                beta: self.beta,
                gamma: self.gamma,
                alpha: self.alpha,
                big_l: self.big_l,
                hazard: self.hazard,
            },
        )?)
    }
}

/// Grid spec. Without explicit z bounds the z-range spans the leisure
/// thresholds of the y-range, widened by the given number of decades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nz: usize,
    pub ny: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: Option<f64>,
    pub z_max: Option<f64>,
    pub decades_below: f64,
    pub decades_above: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let (y_min, y_max) = shadowprice_core::fbsolver::BASELINE_Y_RANGE;
        Self { nz: 128, ny: 128, y_min, y_max, z_min: None, z_max: None, decades_below: 1.0, decades_above: 0.5 }
    }
}

impl GridSection {
    pub fn grid(&self, params: &ModelParams) -> RunResult<DualGrid> {
        Ok(match (self.z_min, self.z_max) {
            (Some(lo), Some(hi)) => DualGrid::new((lo, hi), (self.y_min, self.y_max), self.nz, self.ny)?,
            (None, None) => DualGrid::around_threshold(
                params,
                (self.y_min, self.y_max),
                self.decades_below,
                self.decades_above,
                self.nz,
                self.ny,
            )?,
            _ => return Err(RunError::config("grid.z_min and grid.z_max must be given together")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub relaxation: f64,
    pub hess_floor: f64,
    pub theta2_cap: f64,
    pub residual_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            tol: c.tol,
            max_outer: c.max_outer,
            max_inner: c.max_inner,
            relaxation: c.relaxation,
            hess_floor: c.hess_floor,
            theta2_cap: c.theta2_cap,
            residual_tol: c.residual_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    /// Retirement obstacle.
    pub stopping: bool,
    /// Incompleteness term.
    pub minimax: bool,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { stopping: true, minimax: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub w0: f64,
    pub y0: f64,
}

/// A working strategy simulated against the dual bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub name: String,
    /// `c = consumption_wealth·W + consumption_income·Y`.
    pub consumption_wealth: f64,
    pub consumption_income: f64,
    pub leisure: f64,
    pub risky_fraction: f64,
    /// Latest retirement time.
    pub retire_at: f64,
    /// Retire earlier on reaching the solved wealth boundary.
    #[serde(default)]
    pub retire_on_boundary: bool,
}

impl StrategyEntry {
    pub fn spec(&self, boundary: Option<&shadowprice_core::RetirementBoundary>) -> RunResult<StrategySpec> {
        let stopping = if self.retire_on_boundary {
            let b = boundary.ok_or_else(|| {
                RunError::config(format!("strategy {}: no retirement boundary to follow", self.name))
            })?;
            StoppingRule::from_boundary(b, self.retire_at)?
        } else {
            StoppingRule::AtTime(self.retire_at)
        };
        Ok(StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: self.consumption_wealth, income: self.consumption_income },
            leisure: LeisureRule::Constant(self.leisure),
            risky: if self.risky_fraction == 0.0 {
                RiskyRule::Zero
            } else {
                RiskyRule::WealthFraction(self.risky_fraction)
            },
            stopping,
        })
    }
}

pub fn default_strategies() -> Vec<StrategyEntry> {
    vec![
        StrategyEntry {
            name: "bonds-max-leisure".into(),
            consumption_wealth: 0.03,
            consumption_income: 0.4,
            leisure: 0.5,
            risky_fraction: 0.0,
            retire_at: 5.0,
            retire_on_boundary: false,
        },
        StrategyEntry {
            name: "balanced".into(),
            consumption_wealth: 0.05,
            consumption_income: 0.5,
            leisure: 0.3,
            risky_fraction: 0.5,
            retire_at: 10.0,
            retire_on_boundary: false,
        },
        StrategyEntry {
            name: "boundary-retiree".into(),
            consumption_wealth: 0.04,
            consumption_income: 0.5,
            leisure: 0.4,
            risky_fraction: 0.3,
            retire_at: 10.0,
            retire_on_boundary: true,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    pub s0: f64,
    /// Paths, steps and step for strategy evaluation.
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// Orthogonal kernel components checked by the pricing identities.
    pub kernel_x: Vec<f64>,
    pub identity_paths: usize,
    pub identity_steps: usize,
    pub identity_dt: f64,
    /// Times at which the conditional budget constraint is probed.
    pub probe_times: Vec<f64>,
    pub liquidity_outer: usize,
    pub liquidity_inner: usize,
    /// Size of the multiplier grid for the weak-duality check.
    pub n_lambdas: usize,
    /// Paths, steps, step and coarsening strides for the dual-state scheme check.
    pub z_paths: usize,
    pub z_steps: usize,
    pub z_dt: f64,
    pub z_strides: Vec<usize>,
    /// Horizon for the post-retirement reference strategy.
    pub merton_horizon: f64,
    pub strategies: Vec<StrategyEntry>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            s0: 1.0,
            n_paths: 4000,
            n_steps: 100,
            dt: 0.1,
            kernel_x: vec![-1.0, 0.0, 1.0],
            identity_paths: 10_000,
            identity_steps: 20,
            identity_dt: 0.25,
            probe_times: vec![1.0, 3.0],
            liquidity_outer: 4,
            liquidity_inner: 100,
            n_lambdas: 20,
            z_paths: 2000,
            z_steps: 256,
            z_dt: 1.0 / 64.0,
            z_strides: vec![4, 8, 16, 32],
            merton_horizon: 10.0,
            strategies: default_strategies(),
        }
    }
}

impl SimulationSection {
    pub fn strategy_spec(&self, y0: f64, sequential: bool) -> SimSpec {
        SimSpec {
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            dt: self.dt,
            seed: self.seed,
            s0: self.s0,
            y0,
            sequential,
        }
    }

    pub fn identity_spec(&self, sequential: bool) -> SimSpec {
        SimSpec {
            n_paths: self.identity_paths,
            n_steps: self.identity_steps,
            dt: self.identity_dt,
            seed: self.seed,
            s0: self.s0,
            y0: 1.0,
            sequential,
        }
    }

    pub fn z_spec(&self, sequential: bool) -> SimSpec {
        SimSpec {
            n_paths: self.z_paths,
            n_steps: self.z_steps,
            dt: self.z_dt,
            seed: self.seed,
            s0: self.s0,
            y0: 1.0,
            sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceAxis {
    /// Fixed wage; one row per z node.
    Y,
    /// Fixed shadow price; one row per y node.
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceRequest {
    pub axis: SliceAxis,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub slices: Vec<SliceRequest>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into(), slices: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Single-threaded solve and simulation.
    pub sequential: bool,
    pub skip_sim: bool,
    /// Correlations solved in addition to the main run and compared with `ρ = 1`.
    pub rho_sweep: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub problem: ProblemSection,
    pub queries: Vec<Query>,
    pub simulation: SimulationSection,
    pub output: OutputSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            grid: GridSection::default(),
            solver: SolverSection::default(),
            problem: ProblemSection::default(),
            queries: vec![Query { w0: 10.0, y0: 1.0 }],
            simulation: SimulationSection::default(),
            output: OutputSection::default(),
            run: RunSection::default(),
        }
    }
}

/// Everything the run needs, validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: ModelParams,
    pub grid: DualGrid,
    pub solver: SolverConfig,
    pub problem: ProblemSpec,
}

impl RunConfig {
    /// Parses TOML, a JSON config, or a `summary.json` carrying a `config` echo.
    pub fn parse(text: &str) -> RunResult<Self> {
        if text.trim_start().starts_with('{') {
            let mut value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| RunError::config(format!("invalid JSON: {e}")))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_json::from_value(value).map_err(|e| RunError::config(format!("invalid config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| RunError::config(format!("invalid TOML: {e}")))
        }
    }

    pub fn load(path: &Path) -> RunResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            tol: s.tol,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            relaxation: s.relaxation,
            hess_floor: s.hess_floor,
            theta2_cap: s.theta2_cap,
            residual_tol: s.residual_tol,
            sequential: self.run.sequential,
        }
    }

    /// Re-validates every section and builds the core inputs.
    pub fn resolve(&self) -> RunResult<Resolved> {
        let params = self.model.params()?;
        let grid = self.grid.grid(&params)?;
        let solver = self.solver_config();
        solver.validate()?;
        if self.queries.is_empty() {
            return Err(RunError::config("at least one [[queries]] entry is required"));
        }
        for q in &self.queries {
            if !(q.w0 > 0.0 && q.w0.is_finite() && q.y0 > 0.0 && q.y0.is_finite()) {
                return Err(RunError::config(format!("query ({}, {}) must be positive and finite", q.w0, q.y0)));
            }
        }
        for &rho in &self.run.rho_sweep {
            params.with_rho(rho)?;
        }
        if !self.run.skip_sim {
            self.validate_simulation(&params)?;
        }
        if self.output.dir.is_empty() {
            return Err(RunError::config("output.dir must not be empty"));
        }
        let problem = ProblemSpec {
            payoff: PayoffKind::Working,
            stopping: self.problem.stopping,
            minimax: self.problem.minimax,
        };
        Ok(Resolved { params, grid, solver, problem })
    }

    fn validate_simulation(&self, params: &ModelParams) -> RunResult<()> {
        let s = &self.simulation;
        s.strategy_spec(1.0, false).validate()?;
        s.identity_spec(false).validate()?;
        s.z_spec(false).validate()?;
        if s.n_lambdas < 2 {
            return Err(RunError::config("simulation.n_lambdas must be at least 2"));
        }
        if s.z_strides.len() < 2 || s.z_strides.iter().any(|&k| k == 0 || s.z_steps % k != 0) {
            return Err(RunError::config("simulation.z_strides needs two or more divisors of z_steps"));
        }
        if s.identity_steps == 0 || s.kernel_x.iter().any(|x| !x.is_finite()) {
            return Err(RunError::config("simulation.kernel_x must be finite"));
        }
        let horizon = s.dt * s.n_steps as f64;
        for st in &s.strategies {
            if st.retire_at > horizon + 1e-12 {
                return Err(RunError::config(format!(
                    "strategy {} retires at {} beyond the simulated horizon {horizon}",
                    st.name, st.retire_at
                )));
            }
            if st.retire_on_boundary && !self.problem.stopping {
                return Err(RunError::config(format!("strategy {} follows a boundary but stopping is off", st.name)));
            }
            // The boundary only exists after the solve; validate the rest now.
            let fixed = StrategyEntry { retire_on_boundary: false, ..st.clone() };
            let spec = fixed.spec(None)?;
            spec.validate(params)?;
        }
        if s.merton_horizon > horizon + 1e-12 || s.merton_horizon < 0.0 {
            return Err(RunError::config("simulation.merton_horizon must lie within the simulated horizon"));
        }
        if s.probe_times.iter().any(|&t| !(t >= 0.0 && t <= horizon)) {
            return Err(RunError::config("simulation.probe_times must lie within the simulated horizon"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_the_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn json_echo_round_trips() {
        let mut c = RunConfig::default();
        c.model.rho = 0.123456789;
        c.run.rho_sweep = vec![0.0, 1.0];
        let text = serde_json::to_string(&serde_json::json!({ "config": c, "other": 1 })).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn toml_sections_override_defaults() {
        let c = RunConfig::parse("[model]\nrho = 0.9\n[grid]\nnz = 64\n[[queries]]\nw0 = 3.0\ny0 = 2.0\n").unwrap();
        assert_eq!(c.model.rho, 0.9);
        assert_eq!(c.grid.nz, 64);
        assert_eq!(c.grid.ny, 128);
        assert_eq!(c.queries, vec![Query { w0: 3.0, y0: 2.0 }]);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = RunConfig::parse("[model]\nrhoo = 0.9\n").unwrap_err();
        assert_eq!(e.category, crate::error::Category::Config);
    }

    #[test]
    fn negative_xi_is_a_well_posedness_error() {
        let mut c = RunConfig::default();
        c.model.gamma = 0.5;
        c.model.beta = 0.001;
        c.model.r = 0.2;
        c.model.b = 0.21;
        let e = c.resolve().unwrap_err();
        assert_eq!(e.category, crate::error::Category::WellPosedness, "{e}");
        assert!(e.message.contains('ξ'));
    }
}
