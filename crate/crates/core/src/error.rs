use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("session {session_id} has fewer than two records")]
    DegenerateSession { session_id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no training sessions for runner {runner_id}, period {period_index}")]
    UninformativePeriod { runner_id: String, period_index: u32 },

    #[error("missing {what} for runner {runner_id}, period {period_index}")]
    MissingJoin {
        what: &'static str,
        runner_id: String,
        period_index: u32,
    },

    #[error("resolution {resolution} does not divide the {cells}-cell speed grid")]
    UnalignedResolution { resolution: u32, cells: u32 },

    #[error("resolution mismatch: fit is at G={fit}, table at G={table}")]
    ResolutionMismatch { fit: u32, table: u32 },

    #[error(
        "coordinate descent did not converge: KKT violation {violation:.3e} after {sweeps} sweeps"
    )]
    Convergence { violation: f64, sweeps: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
