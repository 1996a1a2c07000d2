use shadowprice_core::conjugate::post_retirement_payoff;
use shadowprice_core::{solve, DualGrid, ModelParams, ProblemSpec, SolverConfig};

fn zs(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| 10f64.powf(-3.0 + 6.0 * k as f64 / (n - 1) as f64))
}

#[test]
fn derivative_of_dual_value_is_minus_inverse_marginal() {
    let mc = ModelParams::baseline().merton;
    for z in zs(100) {
        let h = 1e-5 * z;
        let fd = (mc.dual(z + h).unwrap() - mc.dual(z - h).unwrap()) / (2.0 * h);
        let i = mc.inverse_marginal(z).unwrap();
        assert!((mc.dual_derivative(z).unwrap() + i).abs() <= 1e-10 * i);
        assert!((fd + i).abs() <= 1e-7 * i, "z = {z}: {fd} vs {}", -i);
    }
}

#[test]
fn dual_value_is_the_sup_over_wealth() {
    let mc = ModelParams::baseline().merton;
    for z in zs(50) {
        // U(w) - wz is concave in ln w; golden section on a wide bracket.
        let f = |lw: f64| mc.value(lw.exp()).unwrap() - lw.exp() * z;
        let w0 = mc.inverse_marginal(z).unwrap().ln();
        let (mut a, mut b) = (w0 - 10.0, w0 + 10.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (x1, x2) = (b - g * (b - a), a + g * (b - a));
            if f(x1) < f(x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        let sup = f(0.5 * (a + b));
        let dual = mc.dual(z).unwrap();
        assert!((sup - dual).abs() <= 1e-6 * dual.abs(), "z = {z}: {sup} vs {dual}");
    }
}

#[test]
fn closed_form_solves_the_stationary_equation() {
    let p = ModelParams::baseline();
    let (mc, beta, r) = (p.merton, p.beta(), p.market.r);
    let e = mc.dual_exponent();
    for z in zs(100) {
        let u = mc.dual(z).unwrap();
        let zu_z = e * u;
        let z2u_zz = e * (e - 1.0) * u;
        let res = -beta * u + (beta - r) * zu_z + 0.5 * mc.theta1 * mc.theta1 * z2u_zz
            + post_retirement_payoff(z, &p.prefs).unwrap();
        assert!(res.abs() <= 1e-8 * u.abs(), "z = {z}: {res}");
    }
}

#[test]
fn solver_is_second_order_on_the_merton_problem() {
    let p = ModelParams::baseline();
    let cfg = SolverConfig::default();
    let errs: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&n| {
            let g = DualGrid::baseline(&p, n, 16).unwrap();
            let f = solve(&g, &p, ProblemSpec::merton(), &cfg).unwrap();
            f.phi
                .indexed_iter()
                .map(|((i, _), &v)| {
                    let u = p.merton.dual(g.z_nodes[i]).unwrap();
                    (v - u).abs() / u.abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(errs[0] / errs[1] >= 3.0 && errs[1] / errs[2] >= 3.0, "{errs:?}");
}
