use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("prototype {0} is not positive definite after eigenvalue clipping")]
    NotPositiveDefinite(usize),
    #[error("class map has no entry for prototype {0}")]
    MissingClass(usize),
    #[error("window of length {window} does not fit a series of length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{op}` needs at least {need} time points, got {got}")]
    SeriesTooShort { op: String, need: usize, got: usize },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("forward cache does not match the current parameters")]
    StaleCache,
    #[error("batch has no positive pair")]
    NoPositivePair,
    #[error("batch contains a single subject, no negatives")]
    SingleSubject,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),
    #[error("snapshot sample set differs from earlier epochs")]
    SampleSetDrift,
    #[error("at least two snapshots are required, saw {0}")]
    TooFewSnapshots(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("requested {requested} samples from a pool of {available}")]
    PoolExhausted { requested: usize, available: usize },
    #[error("constant input: {0}")]
    ConstantInput(&'static str),
    #[error("pairs are all within-class or all between-class")]
    SingleClass,
    #[error("{dropped} of {total} pairs dropped for zero-variance FC vectors")]
    TooManyDropped { dropped: usize, total: usize },
    #[error("missing FC matrix for operator `{op}` and sample `{sample}`")]
    MissingFc { op: String, sample: String },
    #[error("rankings cover different operator sets")]
    OperatorMismatch,
    #[error("no bracketing interval for the quantile equation")]
    NoBracket,
    #[error("projection moves point {0} further than epsilon")]
    InvalidProjection(usize),
    #[error("prototypes {0} and {1} coincide")]
    DegeneratePrototypes(usize, usize),
}
