use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resolution {0} must be even and at least 8")]
    InvalidResolution(usize),

    #[error("mode ({kx}, {ky}) is at or above the Nyquist limit for resolution {resolution}")]
    Nyquist { kx: i64, ky: i64, resolution: usize },

    #[error("circle factors must have ky = 0, got ky = {0}")]
    CircleModeY(i64),

    #[error("sections live on different domains or have different ranks")]
    Mismatch,

    #[error("operator `{op}` requires a {expected} domain")]
    WrongDomain { op: &'static str, expected: &'static str },

    #[error("bidegree ({a}, {b}) has a = b; eta would vanish")]
    DegenerateBidegree { a: f64, b: f64 },

    #[error("power must be at least 1")]
    InvalidPower,

    #[error("matrix is not symmetric in the weighted inner product (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix or weights contain non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("weights and mass entries must be positive")]
    NonPositive,

    #[error("eigensolver failed to converge after {0} iterations")]
    NoConvergence(usize),

    #[error(
        "eigenvalue {0} is zero; the kernel is invariant under conformal change and has no first-order splitting"
    )]
    ZeroEigenvalue(f64),

    #[error("candidate factor set is empty")]
    EmptyCandidates,

    #[error("epsilon grid must contain 0")]
    GridMissingZero,

    #[error("window must satisfy lo < hi, got [{0}, {1}]")]
    InvalidWindow(f64, f64),

    #[error("threshold {c} lies within {guard:e} of the spectrum (nearest eigenvalue {nearest})")]
    ThresholdOnSpectrum { c: f64, guard: f64, nearest: f64 },

    #[error("window [{lo}, {hi}] is not clean at eps = 0")]
    DirtyWindow { lo: f64, hi: f64 },

    #[error("tolerance `{0}` must be positive")]
    NonPositiveTolerance(&'static str),

    #[error("no safety interval can be built: clusters at {0} and {1} touch")]
    ZeroGap(f64, f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for this error: 2 for anything the configuration
    /// can fix, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotSymmetric(_) | Error::NonFinite | Error::NoConvergence(_) | Error::ZeroGap(..) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
