use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("subject {subject:?} at time {time} is missing outcome component(s) {missing:?}")]
    MissingComponent {
        subject: String,
        time: f64,
        missing: Vec<usize>,
    },

    #[error("duplicate observation for subject {subject:?}, time {time}, outcome {outcome}")]
    DuplicateObservation {
        subject: String,
        time: f64,
        outcome: usize,
    },

    #[error("non-finite value for subject {subject:?} at time {time}")]
    NonFinite { subject: String, time: f64 },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("argument {value} lies outside the domain [{lower}, {upper}]")]
    OutOfDomain { value: f64, lower: f64, upper: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("component {component} has zero standard deviation at the reference time")]
    DegenerateBaseline { component: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("block matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigen-spectrum is empty: no positive eigenvalues")]
    EmptySpectrum,

    #[error("grid has {points} points; dense projection needs at least 50, use BLUP scores instead")]
    SparseGrid { points: usize },

    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
}
