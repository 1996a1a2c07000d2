use ndarray::Array2;
use rayon::prelude::*;

use crate::conjugate::{dual_running_payoff_unchecked, post_retirement_payoff_unchecked};
use crate::error::{Error, Result};
use crate::model::ModelParams;

use super::operator::{LocalJet, LogCoefficients, Stencil};
use super::regions::classify_regions;
use super::{
    DualGrid, NodeRegion, PayoffKind, ProblemSpec, SolutionField, SolveDiagnostics, SolverConfig,
};

/// Relaxation below which a diverging sweep is reported as non-convergence.
const MIN_RELAXATION: f64 = 0.5;

/// Sweeps allowed for the update size to halve before relaxation backs off.
const STALL_WINDOW: usize = 1000;

/// Finite-difference derivatives in log coordinates, flat row-major by `y`.
struct LogDerivatives {
    px: Vec<f64>,
    ps: Vec<f64>,
    pxx: Vec<f64>,
    pss: Vec<f64>,
    pxs: Vec<f64>,
}

struct Engine<'a> {
    grid: &'a DualGrid,
    params: &'a ModelParams,
    problem: ProblemSpec,
    config: &'a SolverConfig,
    nz: usize,
    ny: usize,
    hx: f64,
    hs: f64,
    obstacle: Vec<f64>,
    payoff: Vec<f64>,
    scale: Vec<f64>,
    /// Dirichlet value at `z_min`, per wage row.
    left: Vec<f64>,
}

/// Derivative of `f` along a uniform axis: central inside, second-order
/// one-sided at the ends. Returns `(f', f'')`.
fn axis_derivatives(f: impl Fn(usize) -> f64, k: usize, n: usize, h: f64) -> (f64, f64) {
    if k == 0 {
        let (a, b, c) = (f(0), f(1), f(2));
        ((-3.0 * a + 4.0 * b - c) / (2.0 * h), (a - 2.0 * b + c) / (h * h))
    } else if k == n - 1 {
        let (a, b, c) = (f(n - 1), f(n - 2), f(n - 3));
        ((3.0 * a - 4.0 * b + c) / (2.0 * h), (a - 2.0 * b + c) / (h * h))
    } else {
        let (a, b, c) = (f(k - 1), f(k), f(k + 1));
        ((c - a) / (2.0 * h), (a - 2.0 * b + c) / (h * h))
    }
}

impl<'a> Engine<'a> {
    fn new(
        grid: &'a DualGrid,
        params: &'a ModelParams,
        problem: ProblemSpec,
        config: &'a SolverConfig,
    ) -> Result<Self> {
        let (nz, ny) = (grid.nz, grid.ny);
        let mc = params.merton;
        let beta = params.beta();
        let obstacle: Vec<f64> = grid.z_nodes.iter().map(|&z| mc.dual_unchecked(z)).collect();
        let mut payoff = vec![0.0; nz * ny];
        let mut scale = vec![0.0; nz * ny];
        for (j, &y) in grid.y_nodes.iter().enumerate() {
            for (i, &z) in grid.z_nodes.iter().enumerate() {
                let f = match problem.payoff {
                    PayoffKind::Working => dual_running_payoff_unchecked(z, y, &params.prefs),
                    PayoffKind::Retired => post_retirement_payoff_unchecked(z, &params.prefs),
                };
                payoff[j * nz + i] = f;
                scale[j * nz + i] = obstacle[i].abs() + f.abs() / beta;
            }
        }

        let z0 = grid.z_nodes[0];
        let left = if problem.stopping || problem.payoff == PayoffKind::Retired {
            vec![obstacle[0]; ny]
        } else {
            // Never retiring, rich enough that leisure sits at the cap: the
            // capped conjugate scales Ũ and labour income is capitalized at
            // r - m1 + ρΘ₁m2.
            let prefs = &params.prefs;
            let w = &params.wage;
            let cap = prefs.big_l.powf((1.0 - prefs.alpha) * (1.0 - prefs.gamma) / mc.gamma_cap);
            let yield_ = params.market.r - w.m1 + w.rho * mc.theta1 * w.m2;
            if yield_ <= 0.0 {
                return Err(Error::WellPosedness(format!(
                    "labour income is not capitalizable: r - m1 + ρΘ₁m2 = {yield_}"
                )));
            }
            grid.y_nodes
                .iter()
                .map(|&y| cap * obstacle[0] + (1.0 - prefs.big_l) * y * z0 / yield_)
                .collect()
        };

        Ok(Self {
            grid,
            params,
            problem,
            config,
            nz,
            ny,
            hx: grid.hx(),
            hs: grid.hs(),
            obstacle,
            payoff,
            scale,
            left,
        })
    }

    fn initial_guess(&self) -> Vec<f64> {
        let mut phi = vec![0.0; self.nz * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nz {
                phi[j * self.nz + i] = match (self.problem.payoff, self.problem.stopping) {
                    (_, true) => self.obstacle[i],
                    (PayoffKind::Retired, false) => 0.0,
                    (PayoffKind::Working, false) => self.left[j],
                };
            }
        }
        for j in 0..self.ny {
            self.apply_z_edges(&mut phi[j * self.nz..(j + 1) * self.nz], j);
        }
        phi
    }

    /// Projection of a candidate value at node `i` of a row.
    #[inline]
    fn project(&self, v: f64, i: usize, left: f64) -> f64 {
        let mut v = v;
        if self.problem.liquidity() {
            v = v.min(left);
        }
        if self.problem.stopping {
            v = v.max(self.obstacle[i]);
        }
        v
    }

    fn apply_z_edges(&self, row: &mut [f64], j: usize) {
        let n = self.nz;
        row[0] = self.left[j];
        row[n - 1] = match self.problem.payoff {
            PayoffKind::Working => self.project(row[n - 2], n - 1, row[n - 2]),
            PayoffKind::Retired => self.obstacle[n - 1],
        };
    }

    fn stencils(&self, theta2: &[f64]) -> (Vec<Stencil>, usize) {
        let frozen = !self.problem.minimax;
        let mut non_monotone = 0;
        let base = LogCoefficients::frozen(self.params, 0.0).stencil(self.hx, self.hs);
        let st: Vec<Stencil> = theta2
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let (i, j) = (k % self.nz, k / self.nz);
                let interior = i > 0 && i + 1 < self.nz && j > 0 && j + 1 < self.ny;
                let st = if frozen || t == 0.0 {
                    base
                } else {
                    LogCoefficients::frozen(self.params, t).stencil(self.hx, self.hs)
                };
                if interior && !st.monotone {
                    non_monotone += 1;
                }
                st
            })
            .collect();
        (st, non_monotone)
    }

    fn sweep_row(&self, j: usize, phi: &[f64], stencils: &[Stencil], omega: f64) -> (Vec<f64>, f64) {
        let n = self.nz;
        let mut row = phi[j * n..(j + 1) * n].to_vec();
        let up = &phi[(j + 1) * n..(j + 2) * n];
        let down = &phi[(j - 1) * n..j * n];
        let mut change: f64 = 0.0;
        for i in 1..n - 1 {
            let k = j * n + i;
            let st = &stencils[k];
            let sum = st.e * row[i + 1]
                + st.w * row[i - 1]
                + st.n * up[i]
                + st.s * down[i]
                + st.ne * up[i + 1]
                + st.sw * down[i - 1]
                + st.nw * up[i - 1]
                + st.se * down[i + 1];
            let target = (sum + self.payoff[k]) / st.diag;
            let v = self.project(row[i] + omega * (target - row[i]), i, row[i - 1]);
            change = change.max((v - row[i]).abs() / self.scale[k]);
            row[i] = v;
        }
        let last = row[n - 1];
        self.apply_z_edges(&mut row, j);
        change = change.max((row[n - 1] - last).abs() / self.scale[j * n + n - 1]);
        (row, change)
    }

    /// Wage-edge rows: `Φ_ss = 0` extrapolation, then the same projections.
    fn edge_row(&self, j: usize, phi: &mut [f64]) -> f64 {
        let n = self.nz;
        let (near, far) = if j == 0 { (1, 2) } else { (j - 1, j - 2) };
        let mut change: f64 = 0.0;
        for i in 1..n - 1 {
            let v = 2.0 * phi[near * n + i] - phi[far * n + i];
            let v = self.project(v, i, phi[j * n + i - 1]);
            change = change.max((v - phi[j * n + i]).abs() / self.scale[j * n + i]);
            phi[j * n + i] = v;
        }
        let row = &mut phi[j * n..(j + 1) * n];
        self.apply_z_edges(row, j);
        change
    }

    fn sweep(&self, phi: &mut [f64], stencils: &[Stencil], omega: f64) -> f64 {
        let n = self.nz;
        let mut change: f64 = 0.0;
        for color in 0..2 {
            let rows: Vec<usize> = (1..self.ny - 1).filter(|j| j % 2 == color).collect();
            let snapshot: &[f64] = phi;
            let updated: Vec<(usize, Vec<f64>, f64)> = if self.config.sequential {
                rows.iter()
                    .map(|&j| {
                        let (r, c) = self.sweep_row(j, snapshot, stencils, omega);
                        (j, r, c)
                    })
                    .collect()
            } else {
                rows.par_iter()
                    .map(|&j| {
                        let (r, c) = self.sweep_row(j, snapshot, stencils, omega);
                        (j, r, c)
                    })
                    .collect()
            };
            for (j, row, c) in updated {
                phi[j * n..(j + 1) * n].copy_from_slice(&row);
                change = change.max(c);
            }
        }
        change = change.max(self.edge_row(0, phi));
        change = change.max(self.edge_row(self.ny - 1, phi));
        change
    }

    /// Projected SOR to `tol`. Where the stencil is not monotone the
    /// iteration can diverge at high relaxation; a sustained tenfold growth
    /// of the update halves `omega - 1` (or shrinks `omega` below one), and
    /// the reduced factor is kept for later calls.
    fn solve_frozen(&self, phi: &mut [f64], stencils: &[Stencil], omega: &mut f64) -> Result<usize> {
        let mut best = f64::INFINITY;
        let mut checkpoint = f64::INFINITY;
        for it in 1..=self.config.max_inner {
            let change = self.sweep(phi, stencils, *omega);
            if change < self.config.tol {
                return Ok(it);
            }
            if !change.is_finite() || *omega < MIN_RELAXATION {
                break;
            }
            // Non-monotone stencils can make over-relaxation blow up or
            // oscillate without progress; both back off towards plain sweeps.
            let blown = change > 10.0 * best;
            let stalled = it % STALL_WINDOW == 0 && best > 0.5 * checkpoint;
            best = best.min(change);
            if it % STALL_WINDOW == 0 {
                checkpoint = best;
            }
            if blown || stalled {
                *omega = if *omega > 1.0 { 1.0 + 0.5 * (*omega - 1.0) } else { 0.75 * *omega };
                best = change;
                checkpoint = f64::INFINITY;
            }
        }
        let (worst, (iz, iy)) = self.worst_residual(phi, stencils);
        Err(Error::NonConvergence {
            outer: 0,
            inner: self.config.max_inner,
            worst_residual: worst,
            iz,
            iy,
        })
    }

    fn derivatives(&self, phi: &[f64]) -> LogDerivatives {
        let (nz, ny) = (self.nz, self.ny);
        let mut d = LogDerivatives {
            px: vec![0.0; nz * ny],
            ps: vec![0.0; nz * ny],
            pxx: vec![0.0; nz * ny],
            pss: vec![0.0; nz * ny],
            pxs: vec![0.0; nz * ny],
        };
        for j in 0..ny {
            for i in 0..nz {
                let k = j * nz + i;
                let (px, pxx) = axis_derivatives(|a| phi[j * nz + a], i, nz, self.hx);
                let (ps, pss) = axis_derivatives(|b| phi[b * nz + i], j, ny, self.hs);
                d.px[k] = px;
                d.pxx[k] = pxx;
                d.ps[k] = ps;
                d.pss[k] = pss;
            }
        }
        for j in 0..ny {
            for i in 0..nz {
                let (pxs, _) = axis_derivatives(|b| d.px[b * nz + i], j, ny, self.hs);
                d.pxs[j * nz + i] = pxs;
            }
        }
        d
    }

    fn jet(&self, d: &LogDerivatives, phi: &[f64], k: usize) -> LocalJet {
        let (i, j) = (k % self.nz, k / self.nz);
        let (z, y) = (self.grid.z_nodes[i], self.grid.y_nodes[j]);
        LocalJet {
            phi: phi[k],
            d_z: d.px[k] / z,
            d_y: d.ps[k] / y,
            d_zz: (d.pxx[k] - d.px[k]) / (z * z),
            d_yy: (d.pss[k] - d.ps[k]) / (y * y),
            d_zy: d.pxs[k] / (z * y),
        }
    }

    /// Discrete operator plus payoff at interior node `k` under `st`.
    fn hamiltonian(&self, phi: &[f64], st: &Stencil, k: usize) -> f64 {
        let n = self.nz;
        st.e * phi[k + 1]
            + st.w * phi[k - 1]
            + st.n * phi[k + n]
            + st.s * phi[k - n]
            + st.ne * phi[k + n + 1]
            + st.sw * phi[k - n - 1]
            + st.nw * phi[k + n - 1]
            + st.se * phi[k - n + 1]
            - st.diag * phi[k]
            + self.payoff[k]
    }

    /// The two seven-point cross differences at interior node `k`: along
    /// the NE/SW diagonal (used when the cross coefficient is positive) and
    /// along NW/SE.
    fn cross_differences(&self, phi: &[f64], k: usize) -> (f64, f64) {
        let n = self.nz;
        let axial = phi[k + 1] + phi[k - 1] + phi[k + n] + phi[k - n] - 2.0 * phi[k];
        let h2 = 2.0 * self.hx * self.hs;
        (
            (phi[k + n + 1] + phi[k - n - 1] - axial) / h2,
            (axial - phi[k + n - 1] - phi[k - n + 1]) / h2,
        )
    }

    /// Policy improvement for the orthogonal price of risk.
    ///
    /// At interior nodes `θ₂` minimizes the discrete operator itself over
    /// the closed-form minimizers for either cross stencil, the kink where
    /// the cross coefficient changes sign, zero and the previous value;
    /// keeping the previous value on ties makes the iteration monotone.
    /// Edge nodes use the closed form on one-sided differences.
    ///
    /// Returns `θ₂`, the floored flags and the cross difference `Φ_xs`
    /// matching the chosen stencil.
    fn improve_policy(&self, phi: &[f64], previous: &[f64]) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
        let d = self.derivatives(phi);
        let cap = self.config.theta2_cap;
        let theta1 = self.params.merton.theta1;
        let [mu_a, mu_b] = self.params.wage.mu2();
        let mut theta = vec![0.0; phi.len()];
        let mut floored = vec![false; phi.len()];
        let mut cross = d.pxs.clone();
        let node = |k: usize| {
            let (i, j) = (k % self.nz, k / self.nz);
            let floor = self.config.hess_floor * self.scale[k];
            let curv = d.pxx[k] - d.px[k];
            let (curv, fl) = if curv < floor { (floor, true) } else { (curv, false) };
            if i == 0 || i + 1 == self.nz || j == 0 || j + 1 == self.ny {
                return ((mu_b * d.pxs[k] / curv).clamp(-cap, cap), fl, d.pxs[k]);
            }
            let (plus, minus) = self.cross_differences(phi, k);
            let mut candidates = vec![previous[k], mu_b * plus / curv, mu_b * minus / curv, 0.0];
            if mu_b != 0.0 {
                candidates.push(-theta1 * mu_a / mu_b);
            }
            let mut best = (f64::INFINITY, 0.0);
            for t in candidates {
                let t = t.clamp(-cap, cap);
                let st = LogCoefficients::frozen(self.params, t).stencil(self.hx, self.hs);
                let h = self.hamiltonian(phi, &st, k);
                if h < best.0 {
                    best = (h, t);
                }
            }
            let t = best.1;
            let c = -(theta1 * mu_a + t * mu_b);
            (t, fl, if c >= 0.0 { plus } else { minus })
        };
        let results: Vec<(f64, bool, f64)> = if self.config.sequential {
            (0..phi.len()).map(node).collect()
        } else {
            (0..phi.len()).into_par_iter().map(node).collect()
        };
        for (k, (t, fl, x)) in results.into_iter().enumerate() {
            theta[k] = t;
            floored[k] = fl;
            cross[k] = x;
        }
        (theta, floored, cross)
    }

    /// Scaled `max{Ũ - Φ, min{LΦ + f, -Φ_z}}` at an interior node, every
    /// branch expressed in units of `Φ`.
    fn node_residual(&self, phi: &[f64], stencils: &[Stencil], i: usize, j: usize) -> f64 {
        let n = self.nz;
        let k = j * n + i;
        let st = &stencils[k];
        let pde_gap = self.hamiltonian(phi, st, k) / st.diag;
        let grad_gap = if self.problem.liquidity() { phi[k - 1] - phi[k] } else { f64::INFINITY };
        let obstacle_gap =
            if self.problem.stopping { self.obstacle[i] - phi[k] } else { f64::NEG_INFINITY };
        obstacle_gap.max(pde_gap.min(grad_gap)).abs() / self.scale[k]
    }

    fn worst_residual(&self, phi: &[f64], stencils: &[Stencil]) -> (f64, (usize, usize)) {
        let mut worst = (0.0, (0, 0));
        for j in 1..self.ny - 1 {
            for i in 1..self.nz - 1 {
                let r = self.node_residual(phi, stencils, i, j);
                if r > worst.0 {
                    worst = (r, (i, j));
                }
            }
        }
        worst
    }

    fn to_array(&self, flat: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((self.nz, self.ny), |(i, j)| flat[j * self.nz + i])
    }
}

/// Solves the discrete variational inequality on `grid`.
pub fn solve(
    grid: &DualGrid,
    params: &ModelParams,
    problem: ProblemSpec,
    config: &SolverConfig,
) -> Result<SolutionField> {
    config.validate()?;
    let eng = Engine::new(grid, params, problem, config)?;
    let total = eng.nz * eng.ny;
    let mut phi = eng.initial_guess();
    let mut theta2 = vec![0.0; total];
    let mut inner_total = 0;
    let mut outer = 0;
    let mut last_change;
    let mut non_monotone;
    let mut omega = config.relaxation;

    loop {
        outer += 1;
        let (stencils, nm) = eng.stencils(&theta2);
        non_monotone = nm;
        let before = phi.clone();
        inner_total += eng.solve_frozen(&mut phi, &stencils, &mut omega).map_err(|e| match e {
            Error::NonConvergence { inner, worst_residual, iz, iy, .. } => {
                Error::NonConvergence { outer, inner, worst_residual, iz, iy }
            }
            other => other,
        })?;
        last_change = phi
            .iter()
            .zip(&before)
            .zip(&eng.scale)
            .map(|((a, b), s)| (a - b).abs() / s)
            .fold(0.0, f64::max);
        if !problem.minimax {
            break;
        }
        theta2 = eng.improve_policy(&phi, &theta2).0;
        if outer > 1 && last_change < config.tol {
            break;
        }
        if outer >= config.max_outer {
            let (stencils, _) = eng.stencils(&theta2);
            let (worst, (iz, iy)) = eng.worst_residual(&phi, &stencils);
            return Err(Error::NonConvergence {
                outer,
                inner: inner_total,
                worst_residual: worst.max(last_change),
                iz,
                iy,
            });
        }
    }

    // Final coefficients are consistent with the converged field.
    let (improved, floored, cross) = eng.improve_policy(&phi, &theta2);
    let frozen: Vec<f64> = if problem.minimax { improved } else { vec![0.0; total] };
    let (stencils, _) = eng.stencils(&frozen);
    let mut residual = vec![0.0; total];
    for j in 1..eng.ny - 1 {
        for i in 1..eng.nz - 1 {
            residual[j * eng.nz + i] = eng.node_residual(&phi, &stencils, i, j);
        }
    }
    let (worst_k, &max_residual) = residual
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    let worst_node = (worst_k % eng.nz, worst_k / eng.nz);
    if max_residual > config.residual_tol {
        return Err(Error::NonConvergence {
            outer,
            inner: inner_total,
            worst_residual: max_residual,
            iz: worst_node.0,
            iy: worst_node.1,
        });
    }

    // The cross derivative is the one the chosen stencil differences with.
    let d = eng.derivatives(&phi);
    let jets: Vec<LocalJet> = (0..total)
        .map(|k| {
            let (z, y) = (grid.z_nodes[k % eng.nz], grid.y_nodes[k / eng.nz]);
            LocalJet { d_zy: cross[k] / (z * y), ..eng.jet(&d, &phi, k) }
        })
        .collect();
    let pick = |f: fn(&LocalJet) -> f64| eng.to_array(&jets.iter().map(f).collect::<Vec<_>>());

    let mut field = SolutionField {
        grid: grid.clone(),
        params: *params,
        problem,
        config: *config,
        phi: eng.to_array(&phi),
        d_z: pick(|j| j.d_z),
        d_y: pick(|j| j.d_y),
        d_zz: pick(|j| j.d_zz),
        d_yy: pick(|j| j.d_yy),
        d_zy: pick(|j| j.d_zy),
        region: Array2::from_elem((eng.nz, eng.ny), NodeRegion::Continuation),
        theta2: eng.to_array(&frozen),
        residual: eng.to_array(&residual),
        payoff: eng.to_array(&eng.payoff),
        scale: eng.to_array(&eng.scale),
        diagnostics: SolveDiagnostics {
            outer_iterations: outer,
            inner_iterations: inner_total,
            last_outer_change: last_change,
            max_residual,
            worst_node,
            floored_nodes: Vec::new(),
            non_monotone_nodes: non_monotone,
            final_relaxation: omega,
        },
    };
    field.region = classify_regions(&field, config.residual_tol).labels;
    field.diagnostics.floored_nodes = (0..total)
        .filter(|&k| floored[k])
        .map(|k| (k % eng.nz, k / eng.nz))
        .filter(|&(i, j)| field.region[[i, j]] == NodeRegion::Continuation)
        .collect();
    Ok(field)
}
