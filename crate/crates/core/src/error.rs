use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument or parameter lies outside the domain of the formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters are individually valid but the post-retirement problem is ill-posed.
    #[error("ill-posed parameters: {0}")]
    WellPosedness(String),

    /// Iteration caps were hit before the complementarity system settled.
    #[error(
        "no convergence after {outer} outer / {inner} inner iterations: \
         worst scaled residual {worst_residual:.3e} at node (iz={iz}, iy={iy})"
    )]
    NonConvergence {
        outer: usize,
        inner: usize,
        worst_residual: f64,
        iz: usize,
        iy: usize,
    },

    /// A query fell outside what the solved grid resolves.
    #[error("out of range: {0}")]
    Range(String),

    /// A simulated strategy broke an admissibility rule.
    #[error("inadmissible strategy: {0}")]
    Inadmissible(String),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be positive and finite, got {value}")))
    }
}
