use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{leisure_threshold_unchecked, ModelParams};

/// Tensor grid of log-spaced shadow prices `z` and wages `y`.
///
/// The solver works in `x = ln z`, `s = ln y`, where the operator has
/// constant coefficients, so both axes are uniform in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualGrid {
    pub z_nodes: Vec<f64>,
    pub y_nodes: Vec<f64>,
    pub nz: usize,
    pub ny: usize,
}

pub const MIN_NODES: usize = 16;

pub const BASELINE_Y_RANGE: (f64, f64) = (1.0 / 64.0, 64.0);

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

impl DualGrid {
    pub fn new(z_range: (f64, f64), y_range: (f64, f64), nz: usize, ny: usize) -> Result<Self> {
        if nz < MIN_NODES || ny < MIN_NODES {
            return Err(domain(format!(
                "grid needs at least {MIN_NODES} nodes per axis, got nz={nz}, ny={ny}"
            )));
        }
        for (name, (lo, hi)) in [("z", z_range), ("y", y_range)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(domain(format!("{name} bounds must satisfy 0 < lo < hi, got ({lo}, {hi})")));
            }
        }
        let mut z_nodes = log_space(z_range.0, z_range.1, nz);
        let mut y_nodes = log_space(y_range.0, y_range.1, ny);
        // Pin the endpoints to the requested bounds exactly.
        z_nodes[0] = z_range.0;
        z_nodes[nz - 1] = z_range.1;
        y_nodes[0] = y_range.0;
        y_nodes[ny - 1] = y_range.1;
        Ok(Self { z_nodes, y_nodes, nz, ny })
    }

    /// Grid whose z-range covers the leisure threshold `z̃(y)` for every `y`
    /// with `decades_below` / `decades_above` decades of margin.
    pub fn around_threshold(
        params: &ModelParams,
        y_range: (f64, f64),
        decades_below: f64,
        decades_above: f64,
        nz: usize,
        ny: usize,
    ) -> Result<Self> {
        let t_lo = leisure_threshold_unchecked(y_range.1, &params.prefs);
        let t_hi = leisure_threshold_unchecked(y_range.0, &params.prefs);
        let (lo, hi) = (t_lo.min(t_hi), t_lo.max(t_hi));
        Self::new(
            (lo * 10f64.powf(-decades_below), hi * 10f64.powf(decades_above)),
            y_range,
            nz,
            ny,
        )
    }

    /// Default domain: wages within a factor 64 of one, shadow prices one
    /// decade below and half a decade above the leisure thresholds. The
    /// retirement boundary and the zero-wealth boundary stay inside it for
    /// the baseline parameters.
    pub fn baseline(params: &ModelParams, nz: usize, ny: usize) -> Result<Self> {
        Self::around_threshold(params, BASELINE_Y_RANGE, 1.0, 0.5, nz, ny)
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z_nodes[0], self.z_nodes[self.nz - 1])
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y_nodes[0], self.y_nodes[self.ny - 1])
    }

    /// Uniform spacing of `ln z`.
    pub fn hx(&self) -> f64 {
        (self.z_nodes[self.nz - 1].ln() - self.z_nodes[0].ln()) / (self.nz - 1) as f64
    }

    /// Uniform spacing of `ln y`.
    pub fn hs(&self) -> f64 {
        (self.y_nodes[self.ny - 1].ln() - self.y_nodes[0].ln()) / (self.ny - 1) as f64
    }

    /// Cell index and fractional position of `ln v` on a log axis.
    pub(crate) fn locate(nodes: &[f64], v: f64) -> Option<(usize, f64)> {
        let n = nodes.len();
        let (a, b) = (nodes[0].ln(), nodes[n - 1].ln());
        let t = (v.ln() - a) / (b - a) * (n - 1) as f64;
        let tol = 1e-9;
        if !(t >= -tol && t <= (n - 1) as f64 + tol) {
            return None;
        }
        let t = t.clamp(0.0, (n - 1) as f64);
        let k = (t.floor() as usize).min(n - 2);
        Some((k, t - k as f64))
    }

    pub(crate) fn locate_z(&self, z: f64) -> Option<(usize, f64)> {
        Self::locate(&self.z_nodes, z)
    }

    pub(crate) fn locate_y(&self, y: f64) -> Option<(usize, f64)> {
        Self::locate(&self.y_nodes, y)
    }

    /// Same bounds with every axis refined `factor` times (node count `factor·(n-1)+1`).
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.z_range(),
            self.y_range(),
            factor * (self.nz - 1) + 1,
            factor * (self.ny - 1) + 1,
        )
    }
}
