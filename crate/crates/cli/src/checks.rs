//! Invariant suite: closed-form oracles, solver invariants and Monte Carlo
//! identities, each reported with its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use shadowprice_core::conjugate::oracle::oracle_bruteforce;
use shadowprice_core::conjugate::{capped_branch, interior_branch, post_retirement_payoff};
use shadowprice_core::fbsolver::{minimax_objective, minimax_v, stationary_operator, LocalJet};
use shadowprice_core::simcheck::{priced_wage_mean, BudgetReport};
use shadowprice_core::{
    dual_utility, leisure_threshold, simulate, solve, DualGrid, DualityGapReport, ModelParams, NodeRegion,
    PreferenceParams, ProblemSpec, RetirementBoundary, SimSpec, SolutionField, SolverConfig,
};

use crate::error::RunResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `value ≤ tolerance`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            relation: Relation::AtMost,
            tolerance,
            pass: value <= tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `value ≥ tolerance`; NaN fails.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            relation: Relation::AtLeast,
            tolerance,
            pass: value >= tolerance,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        let rel = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let mut s = format!("{verdict} {}: {:.3e} {rel} {:.3e}", self.name, self.value, self.tolerance);
        if !self.detail.is_empty() {
            s.push_str(" (");
            s.push_str(&self.detail);
            s.push(')');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub all_pass: bool,
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn new(checks: Vec<Check>) -> Self {
        Self { all_pass: checks.iter().all(|c| c.pass), checks }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn interior(field: &SolutionField) -> impl Iterator<Item = (usize, usize)> + '_ {
    (1..field.ny() - 1).flat_map(move |j| (1..field.nz() - 1).map(move |i| (i, j)))
}

/// Random preference parameters and `(z, y)` around the leisure threshold,
/// two decades either side.
pub fn conjugate_draws(n: usize, seed: u64) -> Vec<(PreferenceParams, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let prefs = PreferenceParams {
                beta: 0.04,
                gamma: rng.gen_range(1.5..6.0),
                alpha: rng.gen_range(0.2..0.8),
                big_l: rng.gen_range(0.2..0.9),
                hazard: 0.0,
            };
            let y = rng.gen_range(-2.0f64..2.0).exp();
            let z = leisure_threshold(y, &prefs).expect("positive wage") * 10f64.powf(rng.gen_range(-2.0..2.0));
            (prefs, z, y)
        })
        .collect()
}

/// Closed-form conjugate against the brute-force oracle, and continuity of
/// the two branches at the threshold.
pub fn conjugate_oracle(n: usize, seed: u64) -> RunResult<Vec<Check>> {
    let mut worst: f64 = 0.0;
    let mut jump: f64 = 0.0;
    for (prefs, z, y) in conjugate_draws(n, seed) {
        let exact = dual_utility(z, y, &prefs)?;
        let o = oracle_bruteforce(z, y, &prefs, 128)?;
        worst = worst.max(rel(o.value, exact.value)).max(rel(o.c_hat, exact.c_hat)).max(rel(o.l_hat, exact.l_hat));
        let zt = leisure_threshold(y, &prefs)?;
        let (a, b) = (interior_branch(zt, y, &prefs), capped_branch(zt, y, &prefs));
        jump = jump.max(rel(a.value, b.value)).max(rel(a.c_hat, b.c_hat)).max(rel(a.l_hat, b.l_hat));
    }
    Ok(vec![
        Check::at_most("conjugate_vs_oracle", worst, 1e-4, format!("{n} draws, relative, value and maximizers")),
        Check::at_most("conjugate_threshold_continuity", jump, 1e-10, "relative jump of both branches at z̃(y)"),
    ])
}

/// `-Ũ' = I`, `Ũ = sup_w U(w) - wz`, and the stationary equation for `Ũ`.
pub fn merton_analytics(params: &ModelParams) -> RunResult<Vec<Check>> {
    let mc = params.merton;
    let zs: Vec<f64> = (0..100).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 99.0)).collect();
    let (mut deriv, mut sup, mut ode): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let e = mc.dual_exponent();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for &z in &zs {
        let i = mc.inverse_marginal(z)?;
        // Richardson-extrapolated central differences of Ũ.
        let central = |h: f64| (mc.dual(z + h).unwrap() - mc.dual(z - h).unwrap()) / (2.0 * h);
        let h = 1e-3 * z;
        let fd = (4.0 * central(0.5 * h) - central(h)) / 3.0;
        deriv = deriv.max(rel(-fd, i)).max(rel(-mc.dual_derivative(z)?, i));

        let f = |lw: f64| mc.value(lw.exp()).map(|u| u - lw.exp() * z).unwrap_or(f64::NEG_INFINITY);
        let (mut a, mut b) = (i.ln() - 10.0, i.ln() + 10.0);
        for _ in 0..200 {
            let (x1, x2) = (b - g * (b - a), a + g * (b - a));
            if f(x1) < f(x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        let u = mc.dual(z)?;
        sup = sup.max(rel(f(0.5 * (a + b)), u));

        let res = -params.beta() * u
            + (params.beta() - params.market.r) * e * u
            + 0.5 * mc.theta1 * mc.theta1 * e * (e - 1.0) * u
            + post_retirement_payoff(z, &params.prefs)?;
        ode = ode.max(res.abs() / u.abs());
    }
    Ok(vec![
        Check::at_most("merton_inverse_marginal", deriv, 1e-10, "relative, 100 shadow prices"),
        Check::at_most("merton_conjugate_sup", sup, 1e-6, "relative, golden-section sup over wealth"),
        Check::at_most("merton_stationary_residual", ode, 1e-8, "relative, 100 shadow prices"),
    ])
}

/// Sup-norm error of the post-retirement solve against `Ũ` at each size,
/// and the smallest successive error ratio.
pub fn merton_convergence(params: &ModelParams, sizes: &[usize], config: &SolverConfig) -> RunResult<(Vec<f64>, Check)> {
    let mut errs = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = DualGrid::baseline(params, n, 16)?;
        let f = solve(&g, params, ProblemSpec::merton(), config)?;
        let e = f
            .phi
            .indexed_iter()
            .map(|((i, _), &v)| rel(v, params.merton.dual(g.z_nodes[i]).unwrap_or(f64::NAN)))
            .fold(0.0, f64::max);
        errs.push(e);
    }
    let ratio = errs.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min);
    let detail = format!("errors {:?} at nz {sizes:?}", errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>());
    Ok((errs, Check::at_least("merton_convergence_ratio", ratio, 3.0, detail)))
}

pub fn complementarity(field: &SolutionField) -> Check {
    let (iz, iy) = field.diagnostics.worst_node;
    Check::at_most(
        "complementarity_residual",
        field.diagnostics.max_residual,
        1e-6,
        format!("scaled, worst interior node ({iz}, {iy})"),
    )
}

pub fn wealth_nonnegative(field: &SolutionField) -> Check {
    let max = field.d_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Check::at_most("phi_z_nonpositive", max, 1e-8, "max Φ_z over all nodes")
}

pub fn dual_convexity(field: &SolutionField) -> Check {
    let min = field.d_zz.iter().cloned().fold(f64::INFINITY, f64::min);
    Check::at_least("phi_zz_nonnegative", min, -1e-8, "min Φ_zz over all nodes")
}

pub fn obstacle_contact(field: &SolutionField) -> Check {
    let mc = field.params.merton;
    let worst = field
        .region
        .indexed_iter()
        .filter(|(_, &r)| r == NodeRegion::Stopped)
        .map(|((i, j), _)| (field.phi[[i, j]] - mc.dual(field.grid.z_nodes[i]).unwrap_or(f64::NAN)).abs() / field.scale[[i, j]])
        .fold(0.0, f64::max);
    Check::at_most("stopped_on_obstacle", worst, field.config.residual_tol, "scaled |Φ - Ũ| on stopped nodes")
}

/// Continuation nodes away from the edges, where the price-of-risk formula
/// is meaningful.
pub fn continuation_nodes(field: &SolutionField) -> Vec<(usize, usize)> {
    interior(field).filter(|&(i, j)| field.region[[i, j]] == NodeRegion::Continuation).collect()
}

/// Solved `θ₂` against the ratio formula on the reported derivatives.
pub fn theta2_formula(field: &SolutionField) -> Check {
    let cap = field.config.theta2_cap;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (i, j) in continuation_nodes(field) {
        let m = field.minimax_at(i, j);
        if m.floored {
            continue;
        }
        count += 1;
        let formula = m.theta2.clamp(-cap, cap);
        worst = worst.max((field.theta2[[i, j]] - formula).abs() / (1.0 + formula.abs()));
    }
    Check::at_most("theta2_matches_formula", worst, 1e-6, format!("{count} continuation nodes with Φ_zz above the floor"))
}

/// Grid and random probes of the orthogonal price of risk at random
/// continuation nodes; reports the most negative improvement found.
pub fn minimax_probes(field: &SolutionField, n_nodes: usize, seed: u64) -> Check {
    let nodes = continuation_nodes(field);
    if nodes.is_empty() {
        return Check::at_least("minimax_probes", f64::NAN, -1e-10, "no continuation nodes");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..n_nodes {
        let (i, j) = nodes[rng.gen_range(0..nodes.len())];
        let (z, y) = (field.grid.z_nodes[i], field.grid.y_nodes[j]);
        let jet = field.jet(i, j);
        let best = field.minimax_at(i, j).theta2;
        let at_best = minimax_objective(best, &jet, z, y, &field.params);
        let grid = (0..=2000).map(|k| -10.0 + 0.01 * k as f64);
        let local: Vec<f64> = (0..100).map(|_| best + rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-8..0))).collect();
        for v in grid.chain(local) {
            worst = worst.min(minimax_objective(v, &jet, z, y, &field.params) - at_best);
        }
    }
    Check::at_least(
        "minimax_probes",
        worst,
        -1e-10,
        format!("{n_nodes} continuation nodes, 2001 grid and 100 local probes each"),
    )
}

/// The incompleteness term is non-positive wherever `Φ_zz > 0`, and zero
/// at `|ρ| = 1`.
pub fn nonlinear_sign(field: &SolutionField) -> Check {
    let mut worst = f64::NEG_INFINITY;
    for (i, j) in interior(field) {
        let jet = field.jet(i, j);
        if jet.d_zz <= 0.0 {
            continue;
        }
        let (z, y) = (field.grid.z_nodes[i], field.grid.y_nodes[j]);
        worst = worst.max(nonlinear_term(&jet, z, y, &field.params));
    }
    Check::at_most("nonlinear_term_nonpositive", worst, 0.0, "max over interior nodes with Φ_zz > 0")
}

fn nonlinear_term(jet: &LocalJet, z: f64, y: f64, params: &ModelParams) -> f64 {
    let with = stationary_operator(jet, z, y, params, 0.0, f64::MIN_POSITIVE, true).residual;
    let without = stationary_operator(jet, z, y, params, 0.0, f64::MIN_POSITIVE, false).residual;
    with - without
}

/// `ρ = ±1` makes the incompleteness term vanish exactly on arbitrary jets.
pub fn perfect_correlation_exact(params: &ModelParams, seed: u64) -> RunResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for rho in [1.0, -1.0] {
        let p = params.with_rho(rho)?;
        for _ in 0..1000 {
            let jet = LocalJet {
                phi: rng.gen_range(-10.0..0.0),
                d_z: rng.gen_range(-10.0..0.0),
                d_y: rng.gen_range(-5.0..5.0),
                d_zz: rng.gen_range(1e-6..10.0),
                d_yy: rng.gen_range(-5.0..5.0),
                d_zy: rng.gen_range(-5.0..5.0),
            };
            let (z, y) = (rng.gen_range(-3.0f64..3.0).exp(), rng.gen_range(-2.0f64..2.0).exp());
            worst = worst.max(nonlinear_term(&jet, z, y, &p).abs());
            worst = worst.max(minimax_v(&jet, z, y, &p, 1e-12).theta2.abs());
        }
    }
    Ok(Check::at_most("perfect_correlation_exact", worst, 0.0, "incompleteness term and θ₂ at ρ = ±1, 2000 random jets"))
}

/// Relative error of `Φ(λ^{-Γ}z, λy) = λ^{1-Γ}Φ(z, y)` over all z on the
/// central half of the y rows; targets leaving the grid are skipped.
pub fn homogeneity_error(field: &SolutionField, lambda: f64) -> f64 {
    let gam = field.params.merton.gamma_cap;
    let (nz, ny) = (field.nz(), field.ny());
    let mut worst = f64::NAN;
    for j in ny / 4..=3 * ny / 4 {
        for i in 0..nz {
            let (z, y) = (field.grid.z_nodes[i], field.grid.y_nodes[j]);
            let target = lambda.powf(1.0 - gam) * field.phi[[i, j]];
            if let Ok(v) = field.phi_at(lambda.powf(-gam) * z, lambda * y) {
                let e = rel(v, target);
                worst = if worst.is_nan() { e } else { worst.max(e) };
            }
        }
    }
    worst
}

pub fn homogeneity(field: &SolutionField) -> Vec<Check> {
    [0.5, 2.0]
        .iter()
        .map(|&l| {
            Check::at_most(
                format!("homogeneity_lambda_{l}"),
                homogeneity_error(field, l),
                2e-2,
                format!("relative, central half of y rows, {}x{} grid", field.nz(), field.ny()),
            )
        })
        .collect()
}

pub fn boundary_topology(field: &SolutionField, boundary: &RetirementBoundary) -> Check {
    let n = if field.problem.stopping { boundary.warnings.len() } else { 0 };
    Check::at_most("boundary_topology_warnings", n as f64, 0.0, "rows whose stopped set is not one interval at low z")
}

/// `I(z*)` against `-Φ_z(z*)` on the central half of the y rows.
pub fn boundary_consistency(field: &SolutionField, boundary: &RetirementBoundary) -> Check {
    let (lo, hi) = (field.grid.y_nodes[field.ny() / 4], field.grid.y_nodes[3 * field.ny() / 4]);
    let worst = boundary
        .points
        .iter()
        .filter(|p| p.y >= lo && p.y <= hi)
        .map(|p| p.gap() / p.w_star_i)
        .fold(0.0, f64::max);
    Check::at_most("boundary_wealth_consistency", worst, 0.1, "relative |I(z*) + Φ_z(z*)|, central half of y rows")
}

pub fn incomplete_below_complete(incomplete: &SolutionField, complete: &SolutionField) -> RunResult<Check> {
    incomplete.scaled_distance(complete)?;
    let worst = incomplete
        .phi
        .indexed_iter()
        .map(|(ix, &v)| (v - complete.phi[ix]) / incomplete.scale[ix])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Check::at_most("incomplete_le_complete", worst, 1e-9, "scaled max of Φ_incomplete - Φ_complete"))
}

/// Every field invariant that needs only the solved field.
pub fn field_checks(field: &SolutionField, boundary: &RetirementBoundary, seed: u64) -> Vec<Check> {
    let mut out = vec![
        complementarity(field),
        wealth_nonnegative(field),
        dual_convexity(field),
        obstacle_contact(field),
        nonlinear_sign(field),
    ];
    if field.problem.minimax {
        out.push(theta2_formula(field));
        out.push(minimax_probes(field, 100, seed));
    }
    out.extend(homogeneity(field));
    if field.problem.stopping {
        out.push(boundary_topology(field, boundary));
        out.push(boundary_consistency(field, boundary));
    }
    out
}

/// `E[H] = e^{-rt}`, `E[HS] = S₀` and `E[HY]` in closed form at the final
/// step, for each kernel component. Values are the worst `|error|/SE`.
pub fn kernel_identities(params: &ModelParams, xs: &[f64], spec: &SimSpec) -> RunResult<Vec<Check>> {
    let mut out = Vec::new();
    for &x in xs {
        let b = simulate(params, [0.0, x], spec)?;
        let n = spec.n_steps;
        let t = b.times[n];
        let z = |e: shadowprice_core::Estimate, target: f64| (e.mean - target).abs() / e.se;
        let detail = format!("x = {x}, t = {t}, {} paths", spec.n_paths);
        out.push(Check::at_most(format!("kernel_bond_x{x}"), z(b.kernel_at(n), (-params.market.r * t).exp()), 3.0, detail.clone()));
        out.push(Check::at_most(format!("kernel_stock_x{x}"), z(b.priced_asset_at(n), spec.s0), 3.0, detail.clone()));
        out.push(Check::at_most(
            format!("kernel_wage_x{x}"),
            z(b.priced_wage_at(n), priced_wage_mean(params, [0.0, x], spec.y0, t)),
            3.0,
            detail,
        ));
    }
    Ok(out)
}

/// Strong-error slope of the dual-state scheme against the exact process.
pub fn z_consistency(params: &ModelParams, x: f64, spec: &SimSpec, strides: &[usize]) -> RunResult<Check> {
    let b = simulate(params, [0.0, x], spec)?;
    let exact = b.z_paths(1.0);
    let last = spec.n_steps;
    let mut pts = Vec::new();
    for &k in strides {
        let z = b.z_milstein(1.0, k)?;
        let err = z.iter().enumerate().map(|(p, v)| (v - exact[[p, last]]).abs()).sum::<f64>() / z.len() as f64;
        pts.push(((k as f64 * spec.dt).ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    Ok(Check::at_most(
        "z_scheme_strong_order",
        (slope - 1.0).abs(),
        0.3,
        format!("fitted slope {slope:.3} over strides {strides:?}"),
    ))
}

pub fn budget_checks(name: &str, rep: &BudgetReport) -> Vec<Check> {
    let r = rep.outcome.budget_residual;
    vec![
        Check::at_most(format!("budget_{name}"), (r.mean / r.se).abs(), 3.0, "|mean residual| / SE of the static budget identity"),
        Check::at_least(
            format!("liquidity_{name}"),
            rep.liquidity_min.unwrap_or(f64::INFINITY),
            0.0,
            "smallest conditional budget estimate at the probe times",
        ),
    ]
}

pub fn duality_check(name: &str, rep: &DualityGapReport) -> Check {
    let worst = rep
        .probes
        .iter()
        .map(|p| (rep.reward.mean - p.bound) / rep.reward.se)
        .fold(f64::NEG_INFINITY, f64::max);
    Check::at_most(
        format!("weak_duality_{name}"),
        worst,
        3.0,
        format!("max (J - bound)/SE over {} multipliers, W0 = {}, Y0 = {}", rep.probes.len(), rep.w0, rep.y0),
    )
}
