use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resolution too coarse: dx = {dx} exceeds half the domain feature size {feature}")]
    ResolutionTooCoarse { dx: f64, feature: f64 },

    #[error("point cloud has an empty interior")]
    EmptyInterior,

    #[error("need >= 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("stencil deficient at point {point}: {count} neighbors, need {required}")]
    StencilDeficient {
        point: usize,
        count: usize,
        required: usize,
    },

    #[error("ill-conditioned local fit at point {point}: condition estimate {estimate:.3e}")]
    IllConditioned { point: usize, estimate: f64 },

    #[error("singular constrained fit at point {point}: constraint is parallel to null directions")]
    SingularConstraint { point: usize },

    #[error("normal vector is not unit length (norm = {0})")]
    NotUnitNormal(f64),

    #[error("missing stencil for point {0}")]
    MissingStencil(usize),

    #[error("size mismatch: {what} (expected {expected}, got {got})")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("linear solver breakdown: {reason}")]
    SolverBreakdown {
        reason: String,
        residual_history: Vec<f64>,
    },

    #[error("iterative solver did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("need >= 3 resolutions, got {0}")]
    TooFewResolutions(usize),

    #[error("resolution N = {n} failed: {source}")]
    Resolution {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
