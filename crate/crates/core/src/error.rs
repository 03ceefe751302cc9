use std::path::PathBuf;

use thiserror::Error;

use crate::fit::Encoding;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operand code {code} out of range for a {width}-bit scheme")]
    CodeOutOfRange { code: u32, width: u32 },

    #[error("unsupported operand width {0} (supported: 1..=8)")]
    UnsupportedWidth(u32),

    #[error("invalid quantization scheme: {0}")]
    InvalidScheme(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// The best encoding found is carried so callers can still persist it.
    #[error("target RMSE {target} unreachable; best RMSE {best_rmse} at width {best_width}", best_rmse = .best.rmse, best_width = .best.circuit.output_width)]
    TargetUnreachable { target: f64, best: Box<Encoding> },

    #[error("target calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Format { context: String, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
