use thiserror::Error;

/// Errors raised across the crate.
///
/// The variants map onto the three failure classes the command-line front end
/// distinguishes: bad input or configuration, misuse of an API, and numerical
/// breakdown (divergence, non-finite values, degenerate oracle weights).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "oracle degeneracy: effective sample size {ess:.1} from {proposals} proposals \
         is below the required {required:.1}; raise the proposal count"
    )]
    OracleDegenerate {
        ess: f64,
        required: f64,
        proposals: usize,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::OracleDegenerate { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
