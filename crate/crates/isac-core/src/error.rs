//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by scene construction, channel assembly, and the solvers.
#[derive(Debug, Error)]
pub enum IsacError {
    /// A scalar input lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two scene endpoints coincide so a link direction is undefined.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Matrix/vector dimensions do not match the scene configuration.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// The 2x2 angle-difference matrix of the position system is singular:
    /// target, user, and direct-path directions are collinear in
    /// virtual-angle space.
    #[error("degenerate angles: |det B| = {det_abs:.3e} below tolerance")]
    DegenerateAngles { det_abs: f64 },

    /// The position solver exhausted its iteration budget without finding a
    /// layout that satisfies the region and spacing constraints.
    #[error("position search infeasible after {outer_iterations} restarts (best residual {best_residual:.3e})")]
    PositionSearchExhausted {
        outer_iterations: usize,
        best_residual: f64,
    },

    /// Projection of the target steering vector onto the clutter null space
    /// vanished; zero-forcing combining is impossible.
    #[error("zero projection: target and clutter receive angles coincide")]
    ZeroProjection,

    /// Assembled bound denominator was non-positive, which signals an
    /// inconsistency in the moment kernels rather than a valid input.
    #[error("numerical inconsistency: bound denominator {0:.3e} <= 0")]
    NumericalInconsistency(f64),

    /// A constraint set admits no solution at the current iterate.
    #[error("infeasible subproblem: {0}")]
    Infeasible(String),

    /// An empty sample list or other invalid statistical input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Serialization or file I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON encoding/decoding failure.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
