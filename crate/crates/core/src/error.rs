use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The ray from a band point along `-A∇d` never reached the boundary
    /// inside the admissible travel length.
    #[error("geometry violation at ({x}, {y}): {reason}")]
    GeometryViolation { x: f64, y: f64, reason: String },

    #[error("hit condition violated: (d+γ)² − d(d+2γ)Λ² < 0 for d={d}, γ={gamma}, Λ={lambda}")]
    HitConditionViolated { d: f64, gamma: f64, lambda: f64 },

    #[error("ellipticity failure: {reason}")]
    EllipticityFailure { reason: String },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("rejected configuration: {0}")]
    RejectedConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Config(#[from] toml::de::Error),
}
