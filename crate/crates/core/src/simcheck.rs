//! Monte Carlo checks of the primitive processes and of weak duality.
//!
//! Asset price, wage and pricing kernel are geometric with constant
//! coefficients and are stepped exactly in log space. Every path draws from
//! its own ChaCha stream keyed by `(seed, path)`, so bundles do not depend on
//! thread scheduling, and sums over paths run in path order.
//!
//! Cash flows are held constant over each step. With the wealth update
//!
//! ```text
//! W⁺ = (W - θ) e^{r dt} + θ S⁺/S + e^{r dt} ((1 - l) Y - c) dt
//! ```
//!
//! `H W + Σ H (c + (l - 1) Y) dt` is an exact discrete martingale, so the
//! static budget identity holds without time-discretization bias. Utility
//! uses the exact discount weight `∫ e^{-βt} dt` over each step.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::utility;
use crate::error::{domain, ensure_positive, Error, Result};
use crate::fbsolver::SolutionField;
use crate::model::ModelParams;
use crate::primal::{hermite_phi, RetirementBoundary};

/// Tolerance on `σᵀv = 0`.
pub const KERNEL_TOL: f64 = 1e-12;

/// Mixed into the seed of continuation paths used by the liquidity check.
const CONTINUATION_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub s0: f64,
    pub y0: f64,
    /// Generate and aggregate on one thread. Results are identical either way.
    pub sequential: bool,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 || self.n_steps == 0 {
            return Err(domain(format!(
                "need at least 2 paths and 1 step, got {} paths and {} steps",
                self.n_paths, self.n_steps
            )));
        }
        ensure_positive("dt", self.dt)?;
        ensure_positive("s0", self.s0)?;
        ensure_positive("y0", self.y0)?;
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, se: (var / n).sqrt() }
    }

    /// `|mean - target| ≤ k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Simulated primitives, one row per path and one column per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub params: ModelParams,
    pub spec: SimSpec,
    /// `v = [0; x]` defining the kernel.
    pub v: [f64; 2],
    pub times: Vec<f64>,
    pub b1: Array2<f64>,
    pub b2: Array2<f64>,
    pub s: Array2<f64>,
    pub y: Array2<f64>,
    pub h: Array2<f64>,
    /// Non-increasing multiplier process; identically one here.
    pub d: Array2<f64>,
}

/// Exact one-step log increments of `(S, Y, H)` for unit-variance shocks.
#[derive(Debug, Clone, Copy)]
struct Stepper {
    sq: f64,
    s_drift: f64,
    y_drift: f64,
    h_drift: f64,
    sigma: f64,
    mu2: [f64; 2],
    theta: [f64; 2],
}

impl Stepper {
    fn new(params: &ModelParams, v: [f64; 2], dt: f64) -> Self {
        let m = &params.market;
        let w = &params.wage;
        let theta = [params.merton.theta1, v[1]];
        let theta_sq = theta[0] * theta[0] + theta[1] * theta[1];
        Self {
            sq: dt.sqrt(),
            s_drift: (m.b - 0.5 * m.sigma * m.sigma) * dt,
            y_drift: (w.m1 - 0.5 * w.m2 * w.m2) * dt,
            h_drift: -(m.r + 0.5 * theta_sq) * dt,
            sigma: m.sigma,
            mu2: w.mu2(),
            theta,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        [a * self.sq, b * self.sq]
    }

    /// Multiplicative factors for `(S, Y, H)` over one step with increments `db`.
    fn factors(&self, db: [f64; 2]) -> (f64, f64, f64) {
        let dot = |u: [f64; 2]| u[0] * db[0] + u[1] * db[1];
        (
            (self.s_drift + self.sigma * db[0]).exp(),
            (self.y_drift + dot(self.mu2)).exp(),
            (self.h_drift - dot(self.theta)).exp(),
        )
    }
}

fn check_kernel(params: &ModelParams, v: [f64; 2]) -> Result<()> {
    if !(v[0].is_finite() && v[1].is_finite()) {
        return Err(domain("kernel direction v must be finite"));
    }
    if (params.market.sigma * v[0]).abs() > KERNEL_TOL {
        return Err(domain(format!("v = [{}, {}] violates σᵀv = 0", v[0], v[1])));
    }
    Ok(())
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn map_paths<T: Send>(n: usize, sequential: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if sequential {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Simulates `n_paths` paths of `(B, S, Y, H)` under the kernel `v ∈ K(σ)`.
pub fn simulate(params: &ModelParams, v: [f64; 2], spec: &SimSpec) -> Result<PathBundle> {
    spec.validate()?;
    check_kernel(params, v)?;
    let st = Stepper::new(params, v, spec.dt);
    let cols = spec.n_steps + 1;
    let rows: Vec<[Vec<f64>; 5]> = map_paths(spec.n_paths, spec.sequential, |p| {
        let mut rng = path_rng(spec.seed, p as u64);
        let mut out: [Vec<f64>; 5] = Default::default();
        for v in out.iter_mut() {
            v.reserve(cols);
        }
        let (mut b, mut s, mut y, mut h) = ([0.0, 0.0], spec.s0, spec.y0, 1.0);
        for n in 0..cols {
            if n > 0 {
                let db = st.draw(&mut rng);
                let (fs, fy, fh) = st.factors(db);
                b = [b[0] + db[0], b[1] + db[1]];
                s *= fs;
                y *= fy;
                h *= fh;
            }
            out[0].push(b[0]);
            out[1].push(b[1]);
            out[2].push(s);
            out[3].push(y);
            out[4].push(h);
        }
        out
    });
    let field = |k: usize| Array2::from_shape_fn((spec.n_paths, cols), |(p, n)| rows[p][k][n]);
    Ok(PathBundle {
        params: *params,
        spec: *spec,
        v,
        times: (0..cols).map(|n| n as f64 * spec.dt).collect(),
        b1: field(0),
        b2: field(1),
        s: field(2),
        y: field(3),
        h: field(4),
        d: Array2::ones((spec.n_paths, cols)),
    })
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.spec.n_paths
    }

    /// Step index of time `t` (nearest node).
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let n = (t / self.spec.dt).round();
        if !(n >= 0.0 && n <= self.spec.n_steps as f64) {
            return Err(Error::Range(format!("time {t} outside the simulated horizon {}", self.spec.horizon())));
        }
        Ok(n as usize)
    }

    /// `z(t) = λ D(t) e^{βt} H(t)` on every node.
    pub fn z_paths(&self, lambda: f64) -> Array2<f64> {
        let beta = self.params.beta();
        Array2::from_shape_fn(self.h.dim(), |(p, n)| {
            lambda * self.d[[p, n]] * (beta * self.times[n]).exp() * self.h[[p, n]]
        })
    }

    /// Milstein scheme for `dz/z = (β - r) dt - Θᵀ dB` on the coarsened
    /// time grid with `stride` fine steps per coarse step; returns `z` at the
    /// last coarse node of every path. Both diffusion directions are
    /// proportional to `z`, so the noise is commutative and the scheme has
    /// strong order one.
    pub fn z_milstein(&self, lambda: f64, stride: usize) -> Result<Vec<f64>> {
        if stride == 0 || self.spec.n_steps % stride != 0 {
            return Err(domain(format!("stride {stride} must divide {} steps", self.spec.n_steps)));
        }
        let drift = self.params.beta() - self.params.market.r;
        let theta = [self.params.merton.theta1, self.v[1]];
        let theta_sq = theta[0] * theta[0] + theta[1] * theta[1];
        let dt = self.spec.dt * stride as f64;
        Ok((0..self.n_paths())
            .map(|p| {
                let mut z = lambda;
                for n in (0..self.spec.n_steps).step_by(stride) {
                    let db = [
                        self.b1[[p, n + stride]] - self.b1[[p, n]],
                        self.b2[[p, n + stride]] - self.b2[[p, n]],
                    ];
                    let noise = theta[0] * db[0] + theta[1] * db[1];
                    z *= 1.0 + drift * dt - noise + 0.5 * (noise * noise - theta_sq * dt);
                }
                z
            })
            .collect())
    }

    /// `H(t)` at step `n` across paths.
    pub fn kernel_at(&self, n: usize) -> Estimate {
        Estimate::from_samples(&self.h.column(n).to_vec())
    }

    /// `H(t) S(t)` at step `n` across paths.
    pub fn priced_asset_at(&self, n: usize) -> Estimate {
        let v: Vec<f64> = (0..self.n_paths()).map(|p| self.h[[p, n]] * self.s[[p, n]]).collect();
        Estimate::from_samples(&v)
    }

    /// `H(t) Y(t)` at step `n` across paths.
    pub fn priced_wage_at(&self, n: usize) -> Estimate {
        let v: Vec<f64> = (0..self.n_paths()).map(|p| self.h[[p, n]] * self.y[[p, n]]).collect();
        Estimate::from_samples(&v)
    }
}

/// Closed-form `E[H(t) Y(t)] = Y₀ exp((m1 - r - Θ·μ₂) t)`.
pub fn priced_wage_mean(params: &ModelParams, v: [f64; 2], y0: f64, t: f64) -> f64 {
    y0 * (-income_yield(params, v) * t).exp()
}

/// `r - m1 + Θ·μ₂`: the rate at which the kernel discounts labour income.
pub fn income_yield(params: &ModelParams, v: [f64; 2]) -> f64 {
    let mu2 = params.wage.mu2();
    params.market.r - params.wage.m1 + params.merton.theta1 * mu2[0] + v[1] * mu2[1]
}

/// Closed-form `E[Σ H(t_n) Y(t_n) dt]` over the first `n` steps.
pub fn discrete_wage_annuity(params: &ModelParams, v: [f64; 2], y0: f64, dt: f64, n: usize) -> f64 {
    let q = (-income_yield(params, v) * dt).exp();
    if (1.0 - q).abs() < 1e-15 {
        return y0 * dt * n as f64;
    }
    y0 * dt * (1.0 - q.powi(n as i32)) / (1.0 - q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConsumptionRule {
    /// `c = a W + b Y`.
    Linear { wealth: f64, income: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LeisureRule {
    /// Constant leisure in `[0, L]` while working.
    Constant(f64),
    /// Already retired: leisure one and no wage from time zero.
    Retired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RiskyRule {
    Zero,
    /// `θ = π W`.
    WealthFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StoppingRule {
    Immediate,
    AtTime(f64),
    /// First time wealth reaches `W*(Y)` (linear in `ln y`, flat outside the
    /// tabulated range), or `horizon` if that comes first.
    WealthBoundary { boundary: Vec<(f64, f64)>, horizon: f64 },
}

impl StoppingRule {
    /// Retire on hitting the solved boundary `W*(y) = I(z*(y))`.
    pub fn from_boundary(boundary: &RetirementBoundary, horizon: f64) -> Result<Self> {
        if boundary.points.is_empty() {
            return Err(domain("retirement boundary is empty"));
        }
        Ok(Self::WealthBoundary {
            boundary: boundary.points.iter().map(|b| (b.y, b.w_star_i)).collect(),
            horizon,
        })
    }

    fn horizon(&self) -> f64 {
        match self {
            Self::Immediate => 0.0,
            Self::AtTime(t) => *t,
            Self::WealthBoundary { horizon, .. } => *horizon,
        }
    }
}

fn boundary_wealth(boundary: &[(f64, f64)], y: f64) -> f64 {
    let k = boundary.partition_point(|&(by, _)| by < y);
    if k == 0 {
        return boundary[0].1;
    }
    if k == boundary.len() {
        return boundary[k - 1].1;
    }
    let ((y0, w0), (y1, w1)) = (boundary[k - 1], boundary[k]);
    let t = (y.ln() - y0.ln()) / (y1.ln() - y0.ln());
    w0 + t * (w1 - w0)
}

/// A candidate strategy; after retirement the agent follows the optimal
/// post-retirement plan, worth `U(W(τ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub consumption: ConsumptionRule,
    pub leisure: LeisureRule,
    pub risky: RiskyRule,
    pub stopping: StoppingRule,
}

impl StrategySpec {
    /// Optimal post-retirement plan: `c = ξW`, `θ = (b - r)/(σ²Γ) W`,
    /// evaluated on `[0, horizon]` and continued with `U`.
    pub fn merton(params: &ModelParams, horizon: f64) -> Self {
        let m = &params.market;
        Self {
            consumption: ConsumptionRule::Linear { wealth: params.merton.xi, income: 0.0 },
            leisure: LeisureRule::Retired,
            risky: RiskyRule::WealthFraction((m.b - m.r) / (m.sigma * m.sigma * params.merton.gamma_cap)),
            stopping: StoppingRule::AtTime(horizon),
        }
    }

    /// Static admissibility, checked before any simulation.
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let bad = |msg: String| Err(Error::Inadmissible(msg));
        let ConsumptionRule::Linear { wealth, income } = self.consumption;
        if !(wealth >= 0.0 && income >= 0.0 && wealth.is_finite() && income.is_finite()) {
            return bad(format!("consumption coefficients must be finite and non-negative, got ({wealth}, {income})"));
        }
        if wealth == 0.0 && (income == 0.0 || self.leisure == LeisureRule::Retired) {
            return bad("consumption is identically zero".into());
        }
        if let LeisureRule::Constant(l) = self.leisure {
            if !(l > 0.0 && l <= params.prefs.big_l) {
                return bad(format!("leisure {l} outside (0, L = {}]", params.prefs.big_l));
            }
        }
        if let RiskyRule::WealthFraction(pi) = self.risky {
            if !pi.is_finite() {
                return bad("risky fraction must be finite".into());
            }
        }
        let h = self.stopping.horizon();
        if !(h >= 0.0 && h.is_finite()) {
            return bad(format!("stopping horizon must be finite and non-negative, got {h}"));
        }
        if let StoppingRule::WealthBoundary { boundary, .. } = &self.stopping {
            if boundary.is_empty() || boundary.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return bad("wealth boundary must be non-empty with increasing wages".into());
            }
        }
        Ok(())
    }
}

/// Per-path totals of one strategy run.
#[derive(Debug, Clone, Copy, Default)]
struct Walk {
    /// `Σ w_n u(c_n, l_n) + e^{-βτ} U(W(τ))`.
    reward: f64,
    /// `Σ H (c + (l - 1) Y) dt`.
    flows: f64,
    /// `Σ H (1 - l) Y dt`.
    income: f64,
    /// `H(τ) W(τ)`.
    terminal: f64,
    /// `Σ e^{-βt} U'(W) θ (S⁺/S - e^{b dt})`: zero mean, and close to the
    /// martingale part of the reward for near-optimal risky positions.
    control: f64,
    min_wealth: f64,
    tau_step: usize,
}

struct Runner<'a> {
    params: ModelParams,
    strategy: &'a StrategySpec,
    dt: f64,
    horizon_step: usize,
    growth: f64,
    asset_growth: f64,
}

impl<'a> Runner<'a> {
    fn new(bundle: &PathBundle, strategy: &'a StrategySpec) -> Result<Self> {
        strategy.validate(&bundle.params)?;
        Ok(Self {
            params: bundle.params,
            strategy,
            dt: bundle.spec.dt,
            horizon_step: bundle.step_of(strategy.stopping.horizon())?,
            growth: (bundle.params.market.r * bundle.spec.dt).exp(),
            asset_growth: (bundle.params.market.b * bundle.spec.dt).exp(),
        })
    }

    fn stopping_at(&self, horizon_step: usize) -> Self {
        Self { horizon_step, strategy: self.strategy, ..*self }
    }

    /// Walks one path from step `start` with wealth `w`; `point(n)` returns
    /// `(S, Y, H)` at step `n`, with `H` relative to its value at `start`
    /// when the caller wants conditional quantities.
    fn walk(&self, start: usize, w_start: f64, point: impl Fn(usize) -> (f64, f64, f64)) -> Walk {
        let beta = self.params.beta();
        let step_weight = (1.0 - (-beta * self.dt).exp()) / beta;
        let retired = self.strategy.leisure == LeisureRule::Retired;
        let ConsumptionRule::Linear { wealth: a, income: b } = self.strategy.consumption;
        let mut out = Walk { min_wealth: w_start, ..Walk::default() };
        let mut w = w_start;
        let mut n = start;
        loop {
            let (s, y, h) = point(n);
            let stop = n >= self.horizon_step
                || match &self.strategy.stopping {
                    StoppingRule::Immediate => true,
                    StoppingRule::AtTime(_) => false,
                    StoppingRule::WealthBoundary { boundary, .. } => w >= boundary_wealth(boundary, y),
                };
            if stop {
                let t = n as f64 * self.dt;
                out.reward += (-beta * t).exp() * self.params.merton.value(w).unwrap_or(f64::NEG_INFINITY);
                out.terminal = h * w;
                out.tau_step = n;
                return out;
            }
            let (l, wage) = match self.strategy.leisure {
                LeisureRule::Constant(l) => (l, y),
                LeisureRule::Retired => (1.0, 0.0),
            };
            let c = a * w + if retired { 0.0 } else { b * y };
            let theta = match self.strategy.risky {
                RiskyRule::Zero => 0.0,
                RiskyRule::WealthFraction(pi) => pi * w,
            };
            let t = n as f64 * self.dt;
            out.reward += (-beta * t).exp() * step_weight * utility(c, l, &self.params.prefs);
            out.flows += h * (c + (l - 1.0) * wage) * self.dt;
            out.income += h * (1.0 - l) * wage * self.dt;
            let (s_next, _, _) = point(n + 1);
            if theta != 0.0 {
                let marginal = (self.params.merton.xi * w).powf(-self.params.merton.gamma_cap);
                out.control += (-beta * t).exp() * marginal * theta * (s_next / s - self.asset_growth);
            }
            w = (w - theta) * self.growth
                + theta * s_next / s
                + self.growth * ((1.0 - l) * wage - c) * self.dt;
            out.min_wealth = out.min_wealth.min(w);
            n += 1;
        }
    }
}

/// Outcome of running a strategy on a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    /// Objective `J`.
    pub reward: Estimate,
    /// `J` with the asset-return control variate, regression coefficient.
    pub reward_controlled: Estimate,
    /// `E[Σ H (c + (l - 1) Y) dt + H(τ) W(τ)] - W₀`.
    pub budget_residual: Estimate,
    /// `E[Σ H (1 - l) Y dt]`.
    pub income_value: Estimate,
    /// `E[H(τ) W(τ)]`.
    pub terminal_value: Estimate,
    /// Mean retirement time.
    pub mean_tau: f64,
}

fn run_walks(bundle: &PathBundle, strategy: &StrategySpec, w0: f64) -> Result<Vec<Walk>> {
    if !(w0 > 0.0 && w0.is_finite()) {
        return Err(Error::Inadmissible(format!("initial wealth must be positive, got {w0}")));
    }
    let runner = Runner::new(bundle, strategy)?;
    let walks = map_paths(bundle.n_paths(), bundle.spec.sequential, |p| {
        runner.walk(0, w0, |n| (bundle.s[[p, n]], bundle.y[[p, n]], bundle.h[[p, n]]))
    });
    let broke = walks.iter().filter(|w| !(w.min_wealth > 0.0)).count();
    if broke > 0 {
        return Err(Error::Inadmissible(format!(
            "wealth reached zero or below on {broke} of {} paths",
            walks.len()
        )));
    }
    Ok(walks)
}

/// Runs `strategy` from wealth `w₀` on every path. Paths on which wealth
/// reaches zero make the strategy inadmissible.
pub fn evaluate(bundle: &PathBundle, strategy: &StrategySpec, w0: f64) -> Result<StrategyOutcome> {
    let walks = run_walks(bundle, strategy, w0)?;
    let col = |f: fn(&Walk) -> f64| walks.iter().map(f).collect::<Vec<f64>>();
    let residual: Vec<f64> = walks.iter().map(|w| w.flows + w.terminal - w0).collect();
    Ok(StrategyOutcome {
        reward: Estimate::from_samples(&col(|w| w.reward)),
        reward_controlled: controlled(&col(|w| w.reward), &col(|w| w.control)),
        budget_residual: Estimate::from_samples(&residual),
        income_value: Estimate::from_samples(&col(|w| w.income)),
        terminal_value: Estimate::from_samples(&col(|w| w.terminal)),
        mean_tau: walks.iter().map(|w| w.tau_step as f64 * bundle.spec.dt).sum::<f64>() / walks.len() as f64,
    })
}

/// `y - ĉ x` with `ĉ = cov(x, y)/var(x)`; `x` has mean zero.
fn controlled(y: &[f64], x: &[f64]) -> Estimate {
    let n = y.len() as f64;
    let (my, mx) = (y.iter().sum::<f64>() / n, x.iter().sum::<f64>() / n);
    let cov: f64 = y.iter().zip(x).map(|(a, b)| (a - my) * (b - mx)).sum();
    let var: f64 = x.iter().map(|b| (b - mx).powi(2)).sum();
    let coef = if var > 0.0 { cov / var } else { 0.0 };
    let adjusted: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - coef * b).collect();
    Estimate::from_samples(&adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityProbe {
    pub time: f64,
    /// Smallest estimated `E_t[Σ (H_s/H_t)(c + (l - 1) Y) dt + (H_τ/H_t) W(τ)]`
    /// over the sampled outer paths still working at `time`.
    pub min_estimate: f64,
    /// Standard error of that estimate.
    pub se: f64,
    /// Outer paths still working at `time`.
    pub active_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub outcome: StrategyOutcome,
    /// Conditional constraint at the probe times, by nested simulation.
    pub liquidity: Vec<LiquidityProbe>,
    /// Minimum of `min_estimate` over the probes, if any path was active.
    pub liquidity_min: Option<f64>,
}

/// Budget identity and the conditional no-borrowing constraint.
///
/// The conditional constraint is estimated at each probe time for the first
/// `n_outer` paths still working then, from `n_inner` fresh continuation
/// paths each.
pub fn budget_check(
    bundle: &PathBundle,
    strategy: &StrategySpec,
    w0: f64,
    probe_times: &[f64],
    n_outer: usize,
    n_inner: usize,
) -> Result<BudgetReport> {
    let walks = run_walks(bundle, strategy, w0)?;
    let outcome = evaluate(bundle, strategy, w0)?;
    let runner = Runner::new(bundle, strategy)?;
    let st = Stepper::new(&bundle.params, bundle.v, bundle.spec.dt);
    let mut liquidity = Vec::new();
    for (k, &t) in probe_times.iter().enumerate() {
        let n0 = bundle.step_of(t)?;
        let outer: Vec<usize> =
            (0..bundle.n_paths()).filter(|&p| walks[p].tau_step > n0).take(n_outer).collect();
        let estimates: Vec<Estimate> = outer
            .iter()
            .map(|&p| {
                // Wealth at the probe: rerun the stored path, stopping there.
                let partial = runner.stopping_at(n0);
                let w_t = wealth_at(&partial, bundle, p, w0);
                let samples: Vec<f64> = map_paths(n_inner, bundle.spec.sequential, |i| {
                    let seed = bundle.spec.seed ^ CONTINUATION_SALT.wrapping_mul(k as u64 + 1);
                    let mut rng = path_rng(seed, (p * n_inner + i) as u64);
                    let mut pts = vec![(bundle.s[[p, n0]], bundle.y[[p, n0]], 1.0)];
                    for _ in n0..runner.horizon_step {
                        let (s, y, h) = *pts.last().expect("non-empty");
                        let (fs, fy, fh) = st.factors(st.draw(&mut rng));
                        pts.push((s * fs, y * fy, h * fh));
                    }
                    let walk = runner.walk(n0, w_t, |n| pts[n - n0]);
                    walk.flows + walk.terminal
                });
                Estimate::from_samples(&samples)
            })
            .collect();
        let worst = estimates.iter().min_by(|a, b| a.mean.total_cmp(&b.mean));
        liquidity.push(LiquidityProbe {
            time: n0 as f64 * bundle.spec.dt,
            min_estimate: worst.map_or(f64::NAN, |e| e.mean),
            se: worst.map_or(f64::NAN, |e| e.se),
            active_paths: outer.len(),
        });
    }
    let liquidity_min = liquidity
        .iter()
        .filter(|p| p.active_paths > 0)
        .map(|p| p.min_estimate)
        .min_by(f64::total_cmp);
    Ok(BudgetReport { outcome, liquidity, liquidity_min })
}

/// Wealth of path `p` at `runner.horizon_step`, before any retirement there.
fn wealth_at(runner: &Runner, bundle: &PathBundle, p: usize, w0: f64) -> f64 {
    let walk = runner.walk(0, w0, |n| (bundle.s[[p, n]], bundle.y[[p, n]], bundle.h[[p, n]]));
    walk.terminal / bundle.h[[p, walk.tau_step]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityProbe {
    pub lambda: f64,
    /// `Φ(λ, Y₀) + λ W₀`.
    pub bound: f64,
    /// `bound - J`.
    pub slack: f64,
    /// `J ≤ bound + 3 SE`.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityGapReport {
    pub w0: f64,
    pub y0: f64,
    pub reward: Estimate,
    pub probes: Vec<DualityProbe>,
    /// Probe with the smallest slack.
    pub tightest: DualityProbe,
    pub all_hold: bool,
}

/// `n` multipliers log-spaced over the interior of the field's z-range.
pub fn lambda_grid(field: &SolutionField, n: usize) -> Vec<f64> {
    let z = &field.grid.z_nodes;
    let (lo, hi) = (z[1].ln(), z[z.len() - 2].ln());
    (0..n)
        .map(|k| (lo + (hi - lo) * k as f64 / (n.max(2) - 1) as f64).exp())
        .collect()
}

/// Weak duality `J ≤ Φ(λ, Y₀) + λ W₀` for every `λ` in `lambdas`.
pub fn duality_gap(
    bundle: &PathBundle,
    strategy: &StrategySpec,
    w0: f64,
    field: &SolutionField,
    lambdas: &[f64],
) -> Result<DualityGapReport> {
    if lambdas.is_empty() {
        return Err(domain("empty multiplier grid"));
    }
    if field.params != bundle.params {
        return Err(domain("field and paths were built from different parameters"));
    }
    let y0 = bundle.spec.y0;
    let reward = evaluate(bundle, strategy, w0)?.reward;
    let probes = lambdas
        .iter()
        .map(|&lambda| {
            let bound = hermite_phi(field, lambda, y0)? + lambda * w0;
            Ok(DualityProbe {
                lambda,
                bound,
                slack: bound - reward.mean,
                holds: reward.mean <= bound + 3.0 * reward.se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tightest = *probes.iter().min_by(|a, b| a.slack.total_cmp(&b.slack)).expect("non-empty");
    Ok(DualityGapReport { w0, y0, reward, all_hold: probes.iter().all(|p| p.holds), probes, tightest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n_paths: usize, n_steps: usize, dt: f64) -> SimSpec {
        SimSpec { n_paths, n_steps, dt, seed: 7, s0: 1.0, y0: 1.0, sequential: false }
    }

    #[test]
    fn kernel_identities_hold_for_every_orthogonal_price() {
        let p = ModelParams::baseline();
        for x in [-1.0, 0.0, 1.0] {
            let b = simulate(&p, [0.0, x], &spec(10_000, 10, 0.1)).unwrap();
            let n = 10;
            let t = b.times[n];
            assert!(b.kernel_at(n).within((-p.market.r * t).exp(), 3.0), "x = {x}: {:?}", b.kernel_at(n));
            assert!(b.priced_asset_at(n).within(1.0, 3.0), "x = {x}: {:?}", b.priced_asset_at(n));
            let wage = b.priced_wage_at(n);
            assert!(wage.within(priced_wage_mean(&p, [0.0, x], 1.0, t), 3.0), "x = {x}: {wage:?}");
        }
    }

    #[test]
    fn kernel_direction_must_be_orthogonal_to_the_asset() {
        let p = ModelParams::baseline();
        assert!(matches!(simulate(&p, [0.1, 0.0], &spec(10, 2, 0.1)), Err(Error::Domain(_))));
    }

    #[test]
    fn parallel_and_sequential_bundles_agree() {
        let p = ModelParams::baseline();
        let a = simulate(&p, [0.0, 0.3], &spec(64, 5, 0.1)).unwrap();
        let b = simulate(&p, [0.0, 0.3], &SimSpec { sequential: true, ..spec(64, 5, 0.1) }).unwrap();
        assert_eq!((&a.s, &a.y, &a.h), (&b.s, &b.y, &b.h));
        let c = simulate(&p, [0.0, 0.3], &SimSpec { seed: 8, ..spec(64, 5, 0.1) }).unwrap();
        assert_ne!(a.h, c.h);
    }

    #[test]
    fn budget_identity_has_no_discretization_bias() {
        let p = ModelParams::baseline();
        let b = simulate(&p, [0.0, 0.5], &spec(500, 40, 0.05)).unwrap();
        let s = StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: 0.05, income: 0.3 },
            leisure: LeisureRule::Constant(0.4),
            risky: RiskyRule::WealthFraction(0.5),
            stopping: StoppingRule::AtTime(2.0),
        };
        let out = evaluate(&b, &s, 10.0).unwrap();
        assert!(out.budget_residual.within(0.0, 3.0), "{:?}", out.budget_residual);
    }

    #[test]
    fn wage_annuity_matches_discrete_closed_form() {
        let p = ModelParams::baseline();
        let v = [0.0, -0.4];
        let b = simulate(&p, v, &spec(20_000, 40, 0.05)).unwrap();
        let s = StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: 0.02, income: 0.0 },
            leisure: LeisureRule::Constant(0.5),
            risky: RiskyRule::Zero,
            stopping: StoppingRule::AtTime(2.0),
        };
        let out = evaluate(&b, &s, 5.0).unwrap();
        let exact = 0.5 * discrete_wage_annuity(&p, v, 1.0, 0.05, 40);
        assert!(out.income_value.within(exact, 3.0), "{:?} vs {exact}", out.income_value);
    }

    #[test]
    fn overspending_is_inadmissible() {
        let p = ModelParams::baseline();
        let b = simulate(&p, [0.0, 0.0], &spec(50, 100, 0.1)).unwrap();
        let s = StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: 0.0, income: 5.0 },
            leisure: LeisureRule::Constant(0.5),
            risky: RiskyRule::Zero,
            stopping: StoppingRule::AtTime(10.0),
        };
        assert!(matches!(evaluate(&b, &s, 1.0), Err(Error::Inadmissible(_))));
        let lazy = StrategySpec { leisure: LeisureRule::Constant(0.9), ..s };
        assert!(matches!(evaluate(&b, &lazy, 1.0), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn immediate_retirement_earns_the_merton_value() {
        let p = ModelParams::baseline();
        let b = simulate(&p, [0.0, 0.0], &spec(10, 1, 0.1)).unwrap();
        let mut s = StrategySpec::merton(&p, 0.0);
        s.stopping = StoppingRule::Immediate;
        let out = evaluate(&b, &s, 3.0).unwrap();
        assert!((out.reward.mean - p.merton.value(3.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn milstein_dual_process_converges_strongly_at_order_one() {
        let p = ModelParams::baseline();
        let b = simulate(&p, [0.0, 0.7], &spec(2000, 256, 1.0 / 64.0)).unwrap();
        let exact = b.z_paths(1.0);
        let last = b.spec.n_steps;
        let errs: Vec<f64> = [4usize, 8, 16, 32]
            .iter()
            .map(|&k| {
                let z = b.z_milstein(1.0, k).unwrap();
                z.iter().enumerate().map(|(i, v)| (v - exact[[i, last]]).abs()).sum::<f64>() / z.len() as f64
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[1] / w[0]).log2();
            assert!((0.8..1.3).contains(&slope), "{errs:?}");
        }
    }

    #[test]
    fn liquidity_probes_recover_current_wealth() {
        let p = ModelParams::baseline();
        let b = simulate(&p, [0.0, 0.2], &spec(200, 40, 0.05)).unwrap();
        let s = StrategySpec {
            consumption: ConsumptionRule::Linear { wealth: 0.05, income: 0.2 },
            leisure: LeisureRule::Constant(0.3),
            risky: RiskyRule::WealthFraction(0.3),
            stopping: StoppingRule::AtTime(2.0),
        };
        let rep = budget_check(&b, &s, 4.0, &[0.5, 1.0], 5, 200).unwrap();
        assert_eq!(rep.liquidity.len(), 2);
        assert!(rep.liquidity.iter().all(|q| q.active_paths == 5));
        assert!(rep.liquidity_min.unwrap() > 0.0);
    }
}
