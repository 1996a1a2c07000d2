//! Brute-force maximization of `u(c, l) - (c + y l) z` over the feasible box.
//!
//! Independent of the closed-form maximizers: a log-spaced grid search over
//! `(c, l)` followed by nested golden-section refinement on the bracketing
//! cells. Used to verify the conjugate formulas.

use crate::error::{domain, ensure_positive, Result};
use crate::model::{leisure_threshold_unchecked, PreferenceParams};

use super::{consumption_at_leisure, utility, ConjugateResult, Regime};

/// Lower edge of both box coordinates.
pub const BOX_FLOOR: f64 = 1e-6;

const GOLDEN_ITERS: usize = 90;

struct Problem<'a> {
    z: f64,
    y: f64,
    prefs: &'a PreferenceParams,
    log_c: (f64, f64),
    log_l: (f64, f64),
}

impl Problem<'_> {
    fn new<'a>(z: f64, y: f64, prefs: &'a PreferenceParams) -> Result<Problem<'a>> {
        ensure_positive("shadow price z", z)?;
        ensure_positive("wage y", y)?;
        prefs.validate()?;
        let at_floor = consumption_at_leisure(z, BOX_FLOOR, prefs);
        let at_cap = consumption_at_leisure(z, prefs.big_l, prefs);
        let c_max = 10.0 * at_floor.max(at_cap);
        let c_min = (0.1 * at_floor.min(at_cap)).min(BOX_FLOOR);
        Ok(Problem {
            z,
            y,
            prefs,
            log_c: (c_min.ln(), c_max.ln()),
            log_l: (BOX_FLOOR.ln(), prefs.big_l.ln()),
        })
    }

    fn objective(&self, c: f64, l: f64) -> f64 {
        utility(c, l, self.prefs) - (c + self.y * l) * self.z
    }

    fn node(range: (f64, f64), n: usize, k: usize) -> f64 {
        range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64
    }

    /// Best grid node as `(index_c, index_l)`.
    fn grid_argmax(&self, n: usize) -> (usize, usize) {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for il in 0..n {
            let l = Self::node(self.log_l, n, il).exp();
            for ic in 0..n {
                let c = Self::node(self.log_c, n, ic).exp();
                let f = self.objective(c, l);
                if f > best.0 {
                    best = (f, ic, il);
                }
            }
        }
        (best.1, best.2)
    }

    fn result(&self, c: f64, l: f64) -> ConjugateResult {
        let regime = if self.z >= leisure_threshold_unchecked(self.y, self.prefs) {
            Regime::InteriorLeisure
        } else {
            Regime::CappedLeisure
        };
        ConjugateResult { value: self.objective(c, l), c_hat: c, l_hat: l, regime }
    }
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
fn golden_max(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    // The endpoints are candidates too: the maximum may sit on the box edge.
    let mut best = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    for x in [a, b] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

fn check_grid(grid_n: usize) -> Result<()> {
    if grid_n < 64 {
        return Err(domain(format!("oracle grid needs at least 64 nodes per axis, got {grid_n}")));
    }
    Ok(())
}

/// Grid search only, without refinement.
pub fn oracle_grid(z: f64, y: f64, prefs: &PreferenceParams, grid_n: usize) -> Result<ConjugateResult> {
    check_grid(grid_n)?;
    let p = Problem::new(z, y, prefs)?;
    let (ic, il) = p.grid_argmax(grid_n);
    let c = Problem::node(p.log_c, grid_n, ic).exp();
    let l = Problem::node(p.log_l, grid_n, il).exp();
    Ok(p.result(c, l))
}

/// Grid search followed by nested golden-section refinement in `(log l, log c)`.
pub fn oracle_bruteforce(
    z: f64,
    y: f64,
    prefs: &PreferenceParams,
    grid_n: usize,
) -> Result<ConjugateResult> {
    check_grid(grid_n)?;
    let p = Problem::new(z, y, prefs)?;
    let (ic, il) = p.grid_argmax(grid_n);
    let bracket = |range: (f64, f64), k: usize, width: usize| {
        let lo = Problem::node(range, grid_n, k.saturating_sub(width));
        let hi = Problem::node(range, grid_n, (k + width).min(grid_n - 1));
        (lo, hi)
    };
    let (la, lb) = bracket(p.log_l, il, 3);
    let (ca, cb) = bracket(p.log_c, ic, 3);

    let best_c = |log_l: f64| golden_max(ca, cb, |log_c| p.objective(log_c.exp(), log_l.exp()));
    let (log_l, _) = golden_max(la, lb, |log_l| best_c(log_l).1);
    let (log_c, _) = best_c(log_l);
    Ok(p.result(log_c.exp(), log_l.exp()))
}
