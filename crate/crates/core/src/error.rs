use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Library-wide error type.
///
/// `Validation` maps to CLI exit code 2, the numeric failures
/// (`Numeric`, `Coverage`, `FilterCollapse`) to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A regression bucket at some knot has too few scenarios.
    #[error("bucket coverage failure: {0}")]
    Coverage(CoverageReport),

    /// All particle weights vanished (degenerate likelihood coordinate).
    #[error("filter collapse at knot {knot}: all weights zero")]
    FilterCollapse { knot: usize },

    /// An oracle's preconditions do not hold for the given problem.
    #[error("oracle not applicable: {0}")]
    NotApplicable(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-knot bucket occupancy snapshot attached to coverage failures.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoverageReport {
    pub knot: usize,
    pub required: usize,
    pub bucket_sizes: Vec<usize>,
    pub scenarios: usize,
}

impl std::fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "knot {}: bucket sizes {:?} below required {} (P = {}); \
             remedy: raise the intensity mass, raise the number of scenarios, \
             or enable mark resampling",
            self.knot, self.bucket_sizes, self.required, self.scenarios
        )
    }
}
