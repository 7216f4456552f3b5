//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported dimension {dim} (estimator is 1-D only)")]
    UnsupportedDimension { dim: usize },
    #[error("batch size mismatch: {n_p} vs {n_q}")]
    SizeMismatch { n_p: usize, n_q: usize },
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("degenerate bandwidth: all points identical")]
    DegenerateBandwidth,
    #[error("degenerate importance weights (max log-weight {max_log_weight})")]
    DegenerateWeights { max_log_weight: f64 },
    #[error("model does not admit an exact posterior")]
    UnsupportedModel,
    #[error("design outside the model's design space: {0}")]
    InvalidDesign(String),
    #[error("point outside the model's observation space: {0}")]
    ObservationDomain(String),
    #[error("quadrature did not converge (refinement disagreement {disagreement:.3e})")]
    QuadratureAccuracy { disagreement: f64 },
    #[error("degenerate variational fit (zero residual variance)")]
    DegenerateFit,
    #[error("ICNN training diverged at iteration {iter}")]
    TrainingDiverged { iter: usize },
    #[error("Sinkhorn did not converge in {max_iters} iterations (violation {violation:.3e})")]
    SinkhornNonConvergence { max_iters: usize, violation: f64 },
    #[error("utility table is empty")]
    EmptyTable,
    #[error("degenerate utility landscape (max equals min)")]
    DegenerateLandscape,
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
