use thiserror::Error;

/// Errors raised by the extension engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("arity mismatch: expected {expected} arguments, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("singular point: {0}")]
    SingularPoint(String),
    #[error("operation has no exact rational result: {0}")]
    Inexact(String),
    #[error("malformed expression: {0}")]
    Parse(String),
    #[error("jet base points differ")]
    BaseMismatch,
    #[error("jet shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("stratum is not a graph cell: {0}")]
    NotAGraphCell(String),
    #[error("field consistency violated: {0}")]
    ConsistencyViolation(String),
    #[error("unknown stratum `{0}`")]
    UnknownStratum(String),
    #[error("distance bracket [{lower}, {upper}] wider than tolerance {tol}")]
    ConvergenceFailure { lower: f64, upper: f64, tol: f64 },
    #[error("mesh is disconnected between probe points")]
    MeshDisconnected,
    #[error("point lies on Z (d(x, Z) = {0})")]
    OnZ(f64),
    #[error("regularization slack too large: rho {rho} needs plateau threshold {needed} >= outer threshold {outer}")]
    SlackTooLarge { rho: f64, needed: f64, outer: f64 },
    #[error("no smooth distance surrogate for {0}")]
    UnsupportedDescriptor(String),
    #[error("cutoff support escapes the cylinder over stratum `{stratum}` (eta = {eta})")]
    SupportLeak { stratum: String, eta: f64 },
    #[error("field is not declared flat on Z for stratum `{0}`")]
    FlatnessDeclarationMissing(String),
    #[error("derivative unavailable: {0}")]
    DerivativeUnavailable(String),
    #[error("invalid stratification: {0}")]
    StratificationInvalid(String),
    #[error("approach sequence leaves the cone at index {index}: d(x, cell) = {d_cell}, C * d(x, Z) = {bound}")]
    SequenceLeavesCone { index: usize, d_cell: f64, bound: f64 },
    #[error("degenerate scales: {0}")]
    DegenerateScales(String),
    #[error("stencil leaves the domain: {0}")]
    StencilOutOfDomain(String),
    #[error("scene schema error at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
