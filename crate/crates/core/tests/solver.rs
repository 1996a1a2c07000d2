use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowprice_core::fbsolver::{minimax_objective, minimax_v, stationary_operator, LocalJet};
use shadowprice_core::{
    classify_regions, solve, DualGrid, ModelParams, NodeRegion, ProblemSpec, SolutionField, SolverConfig,
};

fn full(p: &ModelParams, n: usize) -> SolutionField {
    let g = DualGrid::baseline(p, n, n).unwrap();
    solve(&g, p, ProblemSpec::full(), &SolverConfig::default()).unwrap()
}

#[test]
fn full_problem_meets_complementarity_and_shape() {
    let f = full(&ModelParams::baseline(), 128);
    assert!(f.diagnostics.max_residual <= 1e-6, "{:?}", f.diagnostics);
    let max_dz = f.d_z.iter().cloned().fold(f64::MIN, f64::max);
    let min_dzz = f.d_zz.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max_dz <= 1e-8, "{max_dz}");
    assert!(min_dzz >= -1e-8, "{min_dzz}");
    for r in [NodeRegion::Stopped, NodeRegion::LiquidityBound, NodeRegion::Continuation] {
        assert!(f.count_region(r) > 0, "{r:?} missing");
    }
    let rm = classify_regions(&f, 1e-7);
    assert!(rm.warnings.is_empty(), "{:?}", rm.warnings);
    // Higher wages make working more attractive: the boundary moves to
    // lower shadow prices, i.e. higher retirement wealth.
    for w in rm.boundary.windows(2) {
        assert!(w[1].z_star <= w[0].z_star * (1.0 + 1e-9));
    }
}

#[test]
fn dual_value_dominates_the_obstacle() {
    let p = ModelParams::baseline();
    let f = full(&p, 64);
    for ((i, _), &v) in f.phi.indexed_iter() {
        let u = p.merton.dual(f.grid.z_nodes[i]).unwrap();
        assert!(v >= u - 1e-12 * u.abs());
    }
}

#[test]
fn perfect_correlation_removes_the_nonlinear_term() {
    let jet = LocalJet { phi: -3.0, d_z: -2.0, d_y: 0.5, d_zz: 1.5, d_yy: -0.2, d_zy: 0.7 };
    for rho in [1.0, -1.0] {
        let p = ModelParams::baseline().with_rho(rho).unwrap();
        let a = stationary_operator(&jet, 2.0, 1.3, &p, 0.4, 1e-10, true);
        let b = stationary_operator(&jet, 2.0, 1.3, &p, 0.4, 1e-10, false);
        assert_eq!(a.residual, b.residual);
        assert_eq!(minimax_v(&jet, 2.0, 1.3, &p, 1e-10).theta2, 0.0);

        let g = DualGrid::baseline(&p, 48, 48).unwrap();
        let cfg = SolverConfig::default();
        let inc = solve(&g, &p, ProblemSpec::full(), &cfg).unwrap();
        let com = solve(&g, &p, ProblemSpec { minimax: false, ..ProblemSpec::full() }, &cfg).unwrap();
        assert!(inc.theta2.iter().all(|&t| t == 0.0));
        // Same discrete problem; only the iteration paths differ.
        assert!(inc.scaled_distance(&com).unwrap() <= 1e-8);
    }
}

#[test]
fn near_perfect_correlation_is_close_to_complete_market() {
    let p1 = ModelParams::baseline().with_rho(1.0).unwrap();
    let p2 = ModelParams::baseline().with_rho(0.999).unwrap();
    let d = full(&p1, 128).scaled_distance(&full(&p2, 128)).unwrap();
    assert!(d <= 1e-2, "{d}");
}

#[test]
fn incompleteness_never_raises_the_dual_value_above_complete_market() {
    let p = ModelParams::baseline();
    let g = DualGrid::baseline(&p, 64, 64).unwrap();
    let cfg = SolverConfig::default();
    let inc = solve(&g, &p, ProblemSpec::full(), &cfg).unwrap();
    let com = solve(&g, &p, ProblemSpec { minimax: false, ..ProblemSpec::full() }, &cfg).unwrap();
    for (ix, &v) in inc.phi.indexed_iter() {
        assert!(v <= com.phi[ix] + 1e-9 * inc.scale[ix], "{ix:?}");
    }
}

fn homogeneity_error(f: &SolutionField, lambda: f64) -> f64 {
    let gam = f.params.merton.gamma_cap;
    let (nz, ny) = (f.nz(), f.ny());
    let mut worst: f64 = 0.0;
    for i in 0..nz {
        for j in ny / 4..=3 * ny / 4 {
            let (z, y) = (f.grid.z_nodes[i], f.grid.y_nodes[j]);
            let target = lambda.powf(1.0 - gam) * f.phi[[i, j]];
            if let Ok(v) = f.phi_at(lambda.powf(-gam) * z, lambda * y) {
                worst = worst.max((v - target).abs() / target.abs());
            }
        }
    }
    worst
}

#[test]
fn dual_value_is_homogeneous() {
    let p = ModelParams::baseline();
    let (coarse, fine) = (full(&p, 64), full(&p, 128));
    for lambda in [0.5, 2.0] {
        let (a, b) = (homogeneity_error(&coarse, lambda), homogeneity_error(&fine, lambda));
        assert!(b <= 2e-2 && b < a, "lambda = {lambda}: {a} -> {b}");
    }
}

#[test]
fn minimax_formula_is_not_beaten_by_probes() {
    let f = full(&ModelParams::baseline(), 64);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let nodes: Vec<(usize, usize)> = f
        .region
        .indexed_iter()
        .filter(|&((i, j), &r)| {
            r == NodeRegion::Continuation && i > 0 && j > 0 && i + 1 < f.nz() && j + 1 < f.ny()
        })
        .map(|(ix, _)| ix)
        .collect();
    for _ in 0..100 {
        let (i, j) = nodes[rng.gen_range(0..nodes.len())];
        let (z, y) = (f.grid.z_nodes[i], f.grid.y_nodes[j]);
        let jet = f.jet(i, j);
        let mm = f.minimax_at(i, j);
        assert!(!mm.floored);
        let best = minimax_objective(mm.theta2, &jet, z, y, &f.params);
        for _ in 0..50 {
            let x = mm.theta2 + rng.gen_range(-5.0..5.0) * 10f64.powi(rng.gen_range(-6..1));
            assert!(minimax_objective(x, &jet, z, y, &f.params) >= best - 1e-10);
        }
    }
}

#[test]
fn parallel_and_sequential_solves_are_bit_identical() {
    let p = ModelParams::baseline();
    let g = DualGrid::baseline(&p, 48, 40).unwrap();
    let a = solve(&g, &p, ProblemSpec::full(), &SolverConfig::default()).unwrap();
    let b = solve(&g, &p, ProblemSpec::full(), &SolverConfig { sequential: true, ..Default::default() }).unwrap();
    assert_eq!(a.phi, b.phi);
    assert_eq!(a.theta2, b.theta2);
}

#[test]
fn bad_configuration_is_rejected() {
    let p = ModelParams::baseline();
    let g = DualGrid::baseline(&p, 32, 32).unwrap();
    let cfg = SolverConfig { relaxation: 2.5, ..Default::default() };
    assert!(solve(&g, &p, ProblemSpec::full(), &cfg).is_err());
}
