use thiserror::Error;

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: {field} = {value} violates `{constraint}`")]
    Domain {
        field: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("simulation diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for SysidError {
    fn from(e: csv::Error) -> SysidError {
        SysidError::Data(format!("csv: {e}"))
    }
}

impl SysidError {
    /// Process exit code for the CLI: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            SysidError::Config(_) | SysidError::Io(_) => 1,
            SysidError::Data(_) | SysidError::Domain { .. } => 2,
            SysidError::Divergence { .. } | SysidError::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SysidError>;
