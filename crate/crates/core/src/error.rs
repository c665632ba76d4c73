use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("missing constant `{0}`")]
    MissingConstant(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quadrature did not converge on box {lower:?}..{upper:?} ({context})")]
    QuadratureNotConverged {
        lower: Vec<f64>,
        upper: Vec<f64>,
        context: String,
    },

    #[error("row {row} of the transition matrix sums to {sum} (allowed deviation {allowed})")]
    RowSum { row: usize, sum: f64, allowed: f64 },

    #[error("representative point {point:?} lies outside cell {cell}")]
    RepresentativeOutsideCell { cell: usize, point: Vec<f64> },

    #[error("partition needs {cells} cells (~{bytes} bytes for the dense matrix), limit is {limit}")]
    TooManyCells { cells: usize, bytes: u128, limit: usize },

    #[error("convergence certificate not applicable: M_f = {m_f} is not below 1")]
    CertificateUnavailable { m_f: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed chain file: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
