use thiserror::Error;

/// Errors raised by basis construction, estimation and prediction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported spatial dimension {0}; expected 1, 2 or 3")]
    Dimension(usize),

    #[error("duplicate location: rows {first} and {second} have identical coordinates")]
    DuplicateLocation { first: usize, second: usize },

    #[error("too few locations: n = {n} must exceed d + 1 = {}", .d + 1)]
    TooFewLocations { n: usize, d: usize },

    #[error("degenerate geometry: design matrix has rank {rank}, expected {expected}")]
    DegenerateGeometry { rank: usize, expected: usize },

    #[error("natural spline constraint violated: |X'alpha| = {residual:e} exceeds {tolerance:e}")]
    ConstraintViolation { residual: f64, tolerance: f64 },

    #[error("basis count {k} outside the admissible range [{min}, {max}]")]
    BasisRange { k: usize, min: usize, max: usize },

    #[error("rank exhausted: eigenvalue {index} is {ratio:e} times the leading eigenvalue")]
    RankExhausted { index: usize, ratio: f64 },

    #[error("eigensolver stopped after {steps} steps with residual {residual:e}")]
    NoConvergence { steps: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty data panel")]
    EmptyPanel,

    #[error("singular profile likelihood: sigma_xi2 + sigma_eps2 = 0")]
    SingularProfile,

    #[error("basis matrix is rank deficient: numerical rank {rank} < {k} columns")]
    RankDeficient { rank: usize, k: usize },

    #[error("basis functions are collinear on the quadrature grid")]
    CollinearBasis,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::DuplicateLocation { .. } => "duplicate_location",
            Error::TooFewLocations { .. } => "too_few_locations",
            Error::DegenerateGeometry { .. } => "degenerate_geometry",
            Error::ConstraintViolation { .. } => "constraint_violation",
            Error::BasisRange { .. } => "basis_range",
            Error::RankExhausted { .. } => "rank_exhausted",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Shape(_) => "shape",
            Error::EmptyPanel => "empty_panel",
            Error::SingularProfile => "singular_profile",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::CollinearBasis => "collinear_basis",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Unknown { .. } => "unknown_name",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
