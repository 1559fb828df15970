use thiserror::Error;

pub type Result<T, E = FlexError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FlexError {
    /// Malformed or inconsistent input (grid mismatch, bad lengths, negative values).
    #[error("input error: {0}")]
    Input(String),

    /// Physical parameters outside their valid range.
    #[error("parameter error: {0}")]
    Param(String),

    #[error("simulation failed at step {step}: {reason}")]
    Simulation { step: usize, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("estimation failed for channel {channel}, basis {basis}, realization {realization}: {source}")]
    Estimation {
        channel: String,
        basis: usize,
        realization: usize,
        #[source]
        source: Box<FlexError>,
    },

    #[error("solver did not converge after {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    Solver {
        iterations: usize,
        kkt_residual: f64,
        best_theta: Vec<f64>,
    },

    #[error("feasibility refinement not converged after {rounds} rounds; slack {slack:?}")]
    Refinement { rounds: usize, slack: Vec<f64> },

    #[error("fit error: {reason} (best residual {residual:.3e})")]
    Fit { reason: String, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FlexError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        FlexError::Input(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FlexError::Param(msg.into())
    }

    /// True for errors caused by the caller's data rather than the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FlexError::Input(_)
                | FlexError::Param(_)
                | FlexError::Unsupported(_)
                | FlexError::Io(_)
                | FlexError::Csv(_)
                | FlexError::Json(_)
        )
    }
}
