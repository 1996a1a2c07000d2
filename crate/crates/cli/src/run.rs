//! Batch run: solve, derive primal quantities, check, and write outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use shadowprice_core::{
    duality_gap, evaluate, hermite_phi, lambda_grid, multiplier, primal_value, retirement_boundary_wealth, simulate,
    solve, DualGrid, DualityGapReport, Estimate, ModelParams, ProblemSpec, RetirementBoundary, SolutionField,
    SolverConfig, StrategySpec,
};
use shadowprice_core::fbsolver::SolveDiagnostics;

use crate::checks::{self, CheckReport};
use crate::config::{Query, RunConfig, SliceAxis};
use crate::error::{RunError, RunResult};
use crate::slice::export_slice;

/// Draws used by the conjugate oracle check inside a run.
const RUN_ORACLE_DRAWS: usize = 200;
const CHECK_SEED: u64 = 7;
const CONVERGENCE_SIZES: [usize; 3] = [64, 128, 256];

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub sequential: bool,
    pub skip_sim: bool,
    pub rho_sweep: Option<Vec<f64>>,
}

impl RunOptions {
    /// Folds the overrides into the config so the echo records what actually ran.
    pub fn apply(&self, mut config: RunConfig) -> RunConfig {
        if let Some(out) = &self.out {
            config.output.dir = out.to_string_lossy().into_owned();
        }
        config.run.sequential |= self.sequential;
        config.run.skip_sim |= self.skip_sim;
        if let Some(r) = &self.rho_sweep {
            config.run.rho_sweep = r.clone();
        }
        config
    }
}

#[derive(Debug, Clone, Serialize)]
struct SolutionRow {
    z: f64,
    y: f64,
    phi: f64,
    phi_z: f64,
    wealth: f64,
    region: &'static str,
    theta2: f64,
}

#[derive(Debug, Clone, Serialize)]
struct BoundaryRow {
    y: f64,
    z_star: f64,
    #[serde(rename = "w_star_I")]
    w_star_i: f64,
    w_star_grad: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RhoRow {
    rho: f64,
    scaled_sup_diff: f64,
    abs_sup_diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Constants {
    pub gamma_cap: f64,
    pub xi: f64,
    pub theta1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryResult {
    pub w0: f64,
    pub y0: f64,
    pub lambda_star: f64,
    pub value: f64,
    pub retire_now: bool,
    pub consumption: f64,
    pub leisure: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub last_outer_change: f64,
    pub max_residual: f64,
    pub worst_node: (usize, usize),
    pub floored_nodes: usize,
    pub non_monotone_nodes: usize,
    pub final_relaxation: f64,
    pub regions: RegionCounts,
    pub boundary_rows: usize,
    pub boundary_warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionCounts {
    pub stopped: usize,
    pub liquidity: usize,
    pub continuation: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyGap {
    pub name: String,
    pub reward: Estimate,
    pub tightest_lambda: f64,
    pub tightest_bound: f64,
    pub tightest_slack: f64,
    pub all_hold: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MertonGap {
    pub lambda_star: f64,
    pub bound: f64,
    pub reward: Estimate,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryDuality {
    pub w0: f64,
    pub y0: f64,
    pub strategies: Vec<StrategyGap>,
    pub merton: MertonGap,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: serde_json::Value,
    pub params: ModelParams,
    pub constants: Constants,
    pub queries: Vec<QueryResult>,
    pub diagnostics: Diagnostics,
    /// Empty when the simulation was skipped.
    pub duality: Vec<QueryDuality>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub checks: CheckReport,
}

/// The config as echoed in `summary.json`. The output location is left out so
/// a re-run from the echo writes identical files wherever it is pointed.
pub fn echo(config: &RunConfig) -> RunResult<serde_json::Value> {
    let mut v = serde_json::to_value(config).map_err(|e| RunError::config(format!("cannot echo config: {e}")))?;
    if let Some(o) = v.get_mut("output").and_then(|o| o.as_object_mut()) {
        o.remove("dir");
    }
    Ok(v)
}

pub fn run(config: &RunConfig) -> RunResult<RunReport> {
    let resolved = config.resolve()?;
    let (params, grid, solver) = (resolved.params, resolved.grid, resolved.solver);
    let out_dir = PathBuf::from(&config.output.dir);
    fs::create_dir_all(&out_dir).map_err(|e| RunError::io(&format!("creating {}", out_dir.display()), e))?;

    let field = solve(&grid, &params, resolved.problem, &solver)?;
    let boundary = retirement_boundary_wealth(&field);
    let queries = config
        .queries
        .iter()
        .map(|q| query_result(&field, q))
        .collect::<RunResult<Vec<_>>>()?;

    let mut all_checks = checks::field_checks(&field, &boundary, CHECK_SEED);
    if field.problem.minimax {
        let complete = solve(&grid, &params, ProblemSpec { minimax: false, ..field.problem }, &solver)?;
        all_checks.push(checks::incomplete_below_complete(&field, &complete)?);
    }
    all_checks.extend(checks::conjugate_oracle(RUN_ORACLE_DRAWS, CHECK_SEED)?);
    all_checks.extend(checks::merton_analytics(&params)?);
    all_checks.push(checks::merton_convergence(&params, &CONVERGENCE_SIZES, &solver)?.1);
    all_checks.push(checks::perfect_correlation_exact(&params, CHECK_SEED)?);

    let mut duality = Vec::new();
    if !config.run.skip_sim {
        let sim = &config.simulation;
        let seq = config.run.sequential;
        all_checks.extend(checks::kernel_identities(&params, &sim.kernel_x, &sim.identity_spec(seq))?);
        all_checks.push(checks::z_consistency(&params, 0.0, &sim.z_spec(seq), &sim.z_strides)?);
        let merton_field = solve(&grid, &params, ProblemSpec::merton(), &solver)?;
        let lambdas = lambda_grid(&field, sim.n_lambdas);
        for q in &config.queries {
            let bundle = simulate(&params, [0.0, 0.0], &sim.strategy_spec(q.y0, seq))?;
            let mut strategies = Vec::new();
            for entry in &sim.strategies {
                let spec = entry.spec(Some(&boundary))?;
                let rep = duality_gap(&bundle, &spec, q.w0, &field, &lambdas)?;
                let budget =
                    shadowprice_core::budget_check(&bundle, &spec, q.w0, &sim.probe_times, sim.liquidity_outer, sim.liquidity_inner)?;
                let tag = format!("{}_w{}_y{}", entry.name, q.w0, q.y0);
                all_checks.push(checks::duality_check(&tag, &rep));
                all_checks.extend(checks::budget_checks(&tag, &budget));
                strategies.push(strategy_gap(&entry.name, &rep));
            }
            let merton = merton_gap(&merton_field, &bundle, q, sim.merton_horizon)?;
            duality.push(QueryDuality { w0: q.w0, y0: q.y0, strategies, merton });
        }
    }

    let summary = Summary {
        config: echo(config)?,
        params,
        constants: Constants {
            gamma_cap: params.merton.gamma_cap,
            xi: params.merton.xi,
            theta1: params.market.theta1(),
        },
        queries,
        diagnostics: diagnostics(&field, &boundary),
        duality,
    };
    let checks = CheckReport::new(all_checks);

    write_solution(&out_dir.join("solution.csv"), &field)?;
    write_boundary(&out_dir.join("boundary.csv"), &boundary)?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_json(&out_dir.join("checks.json"), &checks)?;
    for s in &config.output.slices {
        let rows = export_slice(&field, s.axis, s.value)?;
        let axis = match s.axis {
            SliceAxis::Y => "y",
            SliceAxis::Z => "z",
        };
        write_csv(&out_dir.join(format!("slice_{axis}_{}.csv", s.value)), &rows)?;
    }
    if !config.run.rho_sweep.is_empty() {
        rho_sweep(&out_dir, &params, &grid, resolved.problem, &solver, &config.run.rho_sweep)?;
    }
    Ok(RunReport { out_dir, summary, checks })
}

fn query_result(field: &SolutionField, q: &Query) -> RunResult<QueryResult> {
    let sol = primal_value(q.w0, q.y0, field)?;
    Ok(QueryResult {
        w0: q.w0,
        y0: q.y0,
        lambda_star: sol.lambda_star,
        value: sol.value,
        retire_now: sol.retire_now,
        consumption: sol.consumption,
        leisure: sol.leisure,
    })
}

fn strategy_gap(name: &str, rep: &DualityGapReport) -> StrategyGap {
    StrategyGap {
        name: name.to_string(),
        reward: rep.reward,
        tightest_lambda: rep.tightest.lambda,
        tightest_bound: rep.tightest.bound,
        tightest_slack: rep.tightest.slack,
        all_hold: rep.all_hold,
    }
}

/// Bound at `λ*` minus the simulated Merton reward; closes as grid and paths refine.
fn merton_gap(field: &SolutionField, bundle: &shadowprice_core::PathBundle, q: &Query, horizon: f64) -> RunResult<MertonGap> {
    let lambda = multiplier(field, q.w0, q.y0)?;
    let bound = hermite_phi(field, lambda, q.y0)? + lambda * q.w0;
    let reward = evaluate(bundle, &StrategySpec::merton(&field.params, horizon), q.w0)?.reward_controlled;
    Ok(MertonGap { lambda_star: lambda, bound, reward, gap: bound - reward.mean })
}

fn diagnostics(field: &SolutionField, boundary: &RetirementBoundary) -> Diagnostics {
    use shadowprice_core::NodeRegion::*;
    let d: &SolveDiagnostics = &field.diagnostics;
    Diagnostics {
        outer_iterations: d.outer_iterations,
        inner_iterations: d.inner_iterations,
        last_outer_change: d.last_outer_change,
        max_residual: d.max_residual,
        worst_node: d.worst_node,
        floored_nodes: d.floored_nodes.len(),
        non_monotone_nodes: d.non_monotone_nodes,
        final_relaxation: d.final_relaxation,
        regions: RegionCounts {
            stopped: field.count_region(Stopped),
            liquidity: field.count_region(LiquidityBound),
            continuation: field.count_region(Continuation),
        },
        boundary_rows: boundary.points.len(),
        boundary_warnings: boundary.warnings.iter().map(|w| format!("{w:?}")).collect(),
    }
}

fn rho_sweep(
    out_dir: &Path,
    params: &ModelParams,
    grid: &DualGrid,
    problem: ProblemSpec,
    solver: &SolverConfig,
    rhos: &[f64],
) -> RunResult<()> {
    let reference = solve(grid, &params.with_rho(1.0)?, problem, solver)?;
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let f = if rho == 1.0 { reference.clone() } else { solve(grid, &params.with_rho(rho)?, problem, solver)? };
        let dir = out_dir.join(format!("rho_{rho}"));
        fs::create_dir_all(&dir).map_err(|e| RunError::io(&format!("creating {}", dir.display()), e))?;
        write_solution(&dir.join("solution.csv"), &f)?;
        write_boundary(&dir.join("boundary.csv"), &retirement_boundary_wealth(&f))?;
        let abs = f.phi.iter().zip(reference.phi.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rows.push(RhoRow { rho, scaled_sup_diff: f.scaled_distance(&reference)?, abs_sup_diff: abs });
    }
    write_csv(&out_dir.join("rho_compare.csv"), &rows)
}

/// Rows ordered by wage, then shadow price.
fn write_solution(path: &Path, field: &SolutionField) -> RunResult<()> {
    let g = &field.grid;
    let mut rows = Vec::with_capacity(g.nz * g.ny);
    for iy in 0..g.ny {
        for iz in 0..g.nz {
            rows.push(SolutionRow {
                z: g.z_nodes[iz],
                y: g.y_nodes[iy],
                phi: field.phi[[iz, iy]],
                phi_z: field.d_z[[iz, iy]],
                wealth: field.wealth(iz, iy),
                region: field.region[[iz, iy]].as_str(),
                theta2: field.theta2[[iz, iy]],
            });
        }
    }
    write_csv(path, &rows)
}

fn write_boundary(path: &Path, boundary: &RetirementBoundary) -> RunResult<()> {
    let rows: Vec<BoundaryRow> = boundary
        .points
        .iter()
        .map(|p| BoundaryRow { y: p.y, z_star: p.z_star, w_star_i: p.w_star_i, w_star_grad: p.w_star_grad })
        .collect();
    write_csv_with_header(path, &["y", "z_star", "w_star_I", "w_star_grad"], &rows)
}

/// Writes the header even when there are no rows.
fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> RunResult<()> {
    let ctx = format!("writing {}", path.display());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| RunError::io(&ctx, e))?;
    w.write_record(header).map_err(|e| RunError::io(&ctx, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| RunError::io(&ctx, e))?;
    }
    w.flush().map_err(|e| RunError::io(&ctx, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> RunResult<()> {
    let ctx = format!("writing {}", path.display());
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::io(&ctx, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| RunError::io(&ctx, e))?;
    }
    w.flush().map_err(|e| RunError::io(&ctx, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> RunResult<()> {
    let ctx = format!("writing {}", path.display());
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::io(&ctx, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| RunError::io(&ctx, e))
}
