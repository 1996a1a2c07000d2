use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{NodeRegion, SolutionField};

/// Retirement boundary on one wage row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub iy: usize,
    pub y: f64,
    /// Largest shadow price at which retiring is optimal.
    pub z_star: f64,
    /// Index of the last stopped node on the row.
    pub last_stopped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyWarning {
    /// Stopped nodes on the row do not form one interval starting at `z_min`.
    NotSingleInterval { iy: usize },
    /// The whole row is stopped; the boundary lies above `z_max`.
    AllStopped { iy: usize },
    /// No stopped node on a row although the obstacle is active.
    NoneStopped { iy: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    pub labels: Array2<NodeRegion>,
    /// Boundary `z*(y)` for every row where it is resolved, ordered by `y`.
    pub boundary: Vec<BoundaryPoint>,
    pub warnings: Vec<TopologyWarning>,
}

/// Labels every node by its active complementarity branch and extracts the
/// retirement boundary `z*(y)`.
///
/// `tol` is relative to the node scale. Ties go Stopped, then
/// LiquidityBound, then Continuation.
pub fn classify_regions(field: &SolutionField, tol: f64) -> RegionMap {
    let (nz, ny) = (field.nz(), field.ny());
    let mc = field.params.merton;
    let obstacle: Vec<f64> = field.grid.z_nodes.iter().map(|&z| mc.dual_unchecked(z)).collect();
    let labels = Array2::from_shape_fn((nz, ny), |(i, j)| {
        let phi = field.phi[[i, j]];
        let slack = tol * field.scale[[i, j]];
        // Flat in z against the lower neighbour; the first node looks upward.
        let flat = if i > 0 { field.phi[[i - 1, j]] - phi <= slack } else { nz > 1 && phi - field.phi[[1, j]] <= slack };
        if field.problem.stopping && phi - obstacle[i] <= slack {
            NodeRegion::Stopped
        } else if field.problem.liquidity() && flat {
            NodeRegion::LiquidityBound
        } else {
            NodeRegion::Continuation
        }
    });

    let mut boundary = Vec::new();
    let mut warnings = Vec::new();
    if field.problem.stopping {
        let hx = field.grid.hx();
        for j in 0..ny {
            let stopped: Vec<usize> =
                (0..nz).filter(|&i| labels[[i, j]] == NodeRegion::Stopped).collect();
            let Some(&k) = stopped.last() else {
                warnings.push(TopologyWarning::NoneStopped { iy: j });
                continue;
            };
            if stopped.len() != k + 1 {
                warnings.push(TopologyWarning::NotSingleInterval { iy: j });
            }
            if k == nz - 1 {
                warnings.push(TopologyWarning::AllStopped { iy: j });
                continue;
            }
            // Smooth pasting makes the gap Φ - Ũ quadratic in the distance to
            // the boundary, so its square root is locally linear.
            let mut x_star = field.grid.z_nodes[k].ln();
            if k + 2 < nz {
                let g1 = (field.phi[[k + 1, j]] - obstacle[k + 1]).max(0.0).sqrt();
                let g2 = (field.phi[[k + 2, j]] - obstacle[k + 2]).max(0.0).sqrt();
                if g2 > g1 {
                    let x1 = field.grid.z_nodes[k + 1].ln();
                    x_star = (x1 - hx * g1 / (g2 - g1)).clamp(x_star, x1);
                }
            }
            boundary.push(BoundaryPoint {
                iy: j,
                y: field.grid.y_nodes[j],
                z_star: x_star.exp(),
                last_stopped: k,
            });
        }
    }
    RegionMap { labels, boundary, warnings }
}
