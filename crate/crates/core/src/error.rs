//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the toolchain.
///
/// Configuration and input-validation problems are distinguished from
/// numerical failures so that callers (notably the CLI) can map them to
/// different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: Fock truncation requires dim >= 2")]
    InvalidDimension { dim: usize },

    #[error("truncation overflow: {needed:.3} exceeds the truncation-safe bound {allowed:.3}")]
    TruncationOverflow { needed: f64, allowed: f64 },

    #[error("invalid efficiency {0}: must lie in (0, 1]")]
    InvalidEfficiency(f64),

    #[error("invalid time {0}: must be non-negative and finite")]
    InvalidTime(f64),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("length mismatch: {context} ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: f64, right: f64 },

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("binning mismatch: {0}")]
    BinningMismatch(String),

    #[error("coverage deficit: {fraction:.6} of samples fall outside the histogram range (max allowed {allowed:.6})")]
    CoverageDeficit { fraction: f64, allowed: f64 },

    #[error("empty sample set: {0}")]
    EmptySamples(&'static str),

    #[error("no heralded pairs: every run was filtered out")]
    NoHeraldedPairs,

    #[error("fit did not converge after {iterations} iterations (last residual norm {residual:.6e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("numeric divergence: {0}")]
    NumericDivergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad configuration or bad user input, as
    /// opposed to numerical failures during a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidDimension { .. }
                | Error::InvalidEfficiency(_)
                | Error::InvalidTime(_)
                | Error::InvalidParams(_)
                | Error::Io(_)
        )
    }
}
