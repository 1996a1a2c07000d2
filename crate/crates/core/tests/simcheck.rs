use shadowprice_core::simcheck::{lambda_grid, priced_wage_mean};
use shadowprice_core::{
    budget_check, duality_gap, evaluate, hermite_phi, multiplier, retirement_boundary_wealth, simulate, solve,
    ConsumptionRule, DualGrid, LeisureRule, ModelParams, ProblemSpec, RiskyRule, SimSpec, SolverConfig,
    StoppingRule, StrategySpec,
};

fn spec(n_paths: usize, n_steps: usize, dt: f64, seed: u64) -> SimSpec {
    SimSpec { n_paths, n_steps, dt, seed, s0: 1.0, y0: 1.0, sequential: false }
}

#[test]
fn kernel_prices_bonds_stock_and_wage_for_every_kernel_direction() {
    let p = ModelParams::baseline();
    for x in [-1.0, 0.0, 1.0] {
        let b = simulate(&p, [0.0, x], &spec(10_000, 20, 0.25, 42)).unwrap();
        for n in [4, 12, 20] {
            let t = b.times[n];
            assert!(b.kernel_at(n).within((-p.market.r * t).exp(), 3.0), "x={x} t={t}");
            assert!(b.priced_asset_at(n).within(1.0, 3.0), "x={x} t={t}");
            assert!(b.priced_wage_at(n).within(priced_wage_mean(&p, [0.0, x], 1.0, t), 3.0), "x={x} t={t}");
        }
    }
}

#[test]
fn heuristic_strategies_respect_weak_duality() {
    let p = ModelParams::baseline();
    let g = DualGrid::baseline(&p, 64, 64).unwrap();
    let f = solve(&g, &p, ProblemSpec::full(), &SolverConfig::default()).unwrap();
    let boundary = retirement_boundary_wealth(&f);
    let b = simulate(&p, [0.0, 0.0], &spec(2000, 100, 0.1, 5)).unwrap();
    let lambdas = lambda_grid(&f, 20);
    let heuristics = [
        StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: 0.03, income: 0.4 },
            leisure: LeisureRule::Constant(0.5),
            risky: RiskyRule::Zero,
            stopping: StoppingRule::AtTime(5.0),
        },
        StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: 0.05, income: 0.5 },
            leisure: LeisureRule::Constant(0.3),
            risky: RiskyRule::WealthFraction(0.5),
            stopping: StoppingRule::AtTime(10.0),
        },
        StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: 0.04, income: 0.5 },
            leisure: LeisureRule::Constant(0.4),
            risky: RiskyRule::WealthFraction(0.3),
            stopping: StoppingRule::from_boundary(&boundary, 10.0).unwrap(),
        },
    ];
    for s in &heuristics {
        let r = duality_gap(&b, s, 10.0, &f, &lambdas).unwrap();
        assert!(r.all_hold, "{:?}", r.tightest);
        assert_eq!(r.probes.len(), 20);
    }
    let rep = budget_check(&b, &heuristics[2], 10.0, &[1.0, 3.0], 4, 100).unwrap();
    assert!(rep.outcome.budget_residual.within(0.0, 3.0));
    assert!(rep.liquidity_min.unwrap() > 0.0);
}

#[test]
fn merton_gap_closes_under_refinement() {
    let p = ModelParams::baseline();
    let w0 = 10.0;
    let gaps: Vec<f64> = [(64, 2000, 50, 0.2), (128, 4000, 100, 0.1), (256, 8000, 200, 0.05)]
        .iter()
        .map(|&(n, paths, steps, dt)| {
            let g = DualGrid::baseline(&p, n, 16).unwrap();
            let f = solve(&g, &p, ProblemSpec::merton(), &SolverConfig::default()).unwrap();
            let lambda = multiplier(&f, w0, 1.0).unwrap();
            let bound = hermite_phi(&f, lambda, 1.0).unwrap() + lambda * w0;
            let b = simulate(&p, [0.0, 0.0], &spec(paths, steps, dt, 9)).unwrap();
            let j = evaluate(&b, &StrategySpec::merton(&p, 10.0), w0).unwrap().reward_controlled;
            bound - j.mean
        })
        .collect();
    assert!(gaps[1].abs() < gaps[0].abs() && gaps[2].abs() < gaps[1].abs(), "{gaps:?}");
}

#[test]
fn outcomes_do_not_depend_on_threading() {
    let p = ModelParams::baseline();
    let s = StrategySpec::merton(&p, 2.0);
    let a = evaluate(&simulate(&p, [0.0, 0.5], &spec(300, 20, 0.1, 1)).unwrap(), &s, 3.0).unwrap();
    let seq = SimSpec { sequential: true, ..spec(300, 20, 0.1, 1) };
    let b = evaluate(&simulate(&p, [0.0, 0.5], &seq).unwrap(), &s, 3.0).unwrap();
    assert_eq!(a, b);
}
