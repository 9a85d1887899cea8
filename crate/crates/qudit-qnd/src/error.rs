//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QndError>;

#[derive(Debug, Error)]
pub enum QndError {
    #[error("spin dimension must be at least 2, got {0}")]
    InvalidDimension(usize),

    #[error("matrix is not Hermitian: residual {residual:.3e} exceeds {tol:.3e}")]
    NotHermitian { residual: f64, tol: f64 },

    #[error("Hermitian eigendecomposition did not converge")]
    EigenConvergence,

    #[error("eigendecomposition residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    EigenResidual { residual: f64, tol: f64 },

    #[error(
        "eigenstate classification failed: eigenstate {index} (energy {energy_khz:.6} kHz) \
         has best overlap {overlap:.4} <= 0.5 with any nominal basis state"
    )]
    Classification {
        index: usize,
        energy_khz: f64,
        overlap: f64,
    },

    #[error("matrix is not column-stochastic: column {column} sums to {sum:.12}")]
    NotStochastic { column: usize, sum: f64 },

    #[error("matrix entry ({row},{col}) = {value:.3e} is outside [0, 1]")]
    NotProbability { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("matrix is not embeddable as exp of a generator: {0}")]
    NonEmbeddable(String),

    #[error(
        "level tracking ambiguous at theta = {theta_rad:.5} rad: overlap margin {margin:.3} < 0.1; \
         use finer angle sampling"
    )]
    LevelTracking { theta_rad: f64, margin: f64 },

    #[error("fit did not converge after {0} iterations")]
    FitNonConvergence(usize),

    #[error(
        "jacobian is rank-deficient (sigma_min/sigma_max = {ratio:.3e}); \
         unconstrained direction: {direction:?}"
    )]
    RankDeficient { ratio: f64, direction: Vec<f64> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),

    #[error("malformed input at line {line}: {message}")]
    MalformedInput { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QndError {
    /// True for errors caused by bad user configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            QndError::InvalidDimension(_)
                | QndError::InvalidConfig(_)
                | QndError::EmptyGrid(_)
                | QndError::DimensionMismatch(_, _)
                | QndError::MalformedInput { .. }
        )
    }
}
