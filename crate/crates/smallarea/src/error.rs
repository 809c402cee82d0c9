//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Root finding was asked to bracket a root but the function has the
    /// same sign at both endpoints.
    #[error("no sign change on [{lo}, {hi}]: f(lo)={flo:e}, f(hi)={fhi:e}")]
    NoBracket {
        lo: f64,
        hi: f64,
        flo: f64,
        fhi: f64,
    },

    /// An iterative routine exhausted its budget before meeting its target.
    #[error("failed to converge: {0}")]
    NonConvergence(String),

    /// A matrix required to be positive definite was not.
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// An argument fell outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The design matrix is rank deficient or the weighted normal equations
    /// are singular.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// An operation requires more areas than the dataset provides.
    #[error("too few areas: m={m} must exceed {required} ({context})")]
    TooFewAreas {
        m: usize,
        required: usize,
        context: &'static str,
    },

    /// The flat-prior posterior is improper for this model size.
    #[error("improper posterior: requires m > p + 2 (m={m}, p={p})")]
    ImproperPosterior { m: usize, p: usize },

    /// The requested quantity is undefined or unusable because the variance
    /// component was estimated at the boundary of the parameter space.
    #[error("boundary variance estimate: {0}")]
    BoundaryEstimate(String),

    /// A shrinkage weight of exactly one collapses the interval width.
    #[error("degenerate shrinkage weight: {0}")]
    DegenerateShrinkage(String),

    /// The unit-level data carry no usable within-area variation.
    #[error("insufficient within-area variation: n - m - p* = {dof}")]
    InsufficientWithinVariation { dof: i64 },

    /// An operation restricted to equal sampling variances received
    /// unequal ones.
    #[error("sampling variances are not all equal (min {min}, max {max})")]
    NotBalanced { min: f64, max: f64 },

    /// A text input failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Parsed input violated a dataset invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code contract: 2 for input/validation problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Domain(_)
            | Error::SingularDesign(_)
            | Error::TooFewAreas { .. }
            | Error::NotBalanced { .. }
            | Error::Io(_) => 2,
            Error::NoBracket { .. }
            | Error::NonConvergence(_)
            | Error::NotPositiveDefinite { .. }
            | Error::ImproperPosterior { .. }
            | Error::BoundaryEstimate(_)
            | Error::DegenerateShrinkage(_)
            | Error::InsufficientWithinVariation { .. } => 3,
        }
    }
}
