use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- data ----
    #[error("response needs at least 3 distinct categories, found {found}")]
    InvalidResponseScale { found: usize },

    #[error("duplicate observation for subject `{subject}` at time `{time}`")]
    DuplicateObservation { subject: String, time: String },

    #[error("no complete rows remain after removing missing values")]
    EmptyData,

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("line {line}: cannot parse `{value}` in column `{column}` as a number")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("association needs at least two measurement occasions, found {0}")]
    SingleOccasion(usize),

    // ---- parameters and numerics ----
    #[error("{what} index {index} out of range (valid: 0..{len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate probability: {0}")]
    DegenerateProbability(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("constraint matrix is rank deficient (rank {rank}, rows {rows})")]
    RankDeficient { rank: usize, rows: usize },

    // ---- association ----
    #[error("pair table {pair} has an empty row or column; retry with a larger `add` constant")]
    SparseTable { pair: usize },

    #[error("association model fit failed{}: {detail}", fmt_pair(*.pair))]
    AssociationFit { pair: Option<usize>, detail: String },

    // ---- ipf ----
    #[error("IPF did not converge in {iterations} iterations (max margin deviation {deviation:e})")]
    IpfNonConvergence { iterations: usize, deviation: f64 },

    #[error("weight matrix for subject {subject}, pair ({t1}, {t2}): {source}")]
    WeightAssembly {
        subject: usize,
        t1: usize,
        t2: usize,
        #[source]
        source: Box<Error>,
    },

    // ---- GEE ----
    #[error("independence fit for starting values failed: {0}; supply explicit start values")]
    InitialFit(String),

    #[error("Fisher scoring did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize, last_beta: Vec<f64> },

    #[error("usage: {0}")]
    Usage(String),
}

fn fmt_pair(pair: Option<usize>) -> String {
    pair.map(|p| format!(" (pair {p})")).unwrap_or_default()
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::InvalidResponseScale { .. }
            | Error::DuplicateObservation { .. }
            | Error::EmptyData
            | Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::Csv(_)
            | Error::Io(_)
            | Error::SingleOccasion(_) => 3,
            Error::SparseTable { .. } | Error::AssociationFit { .. } => 4,
            Error::NonConvergence { .. } | Error::InitialFit(_) => 5,
            _ => 6,
        }
    }
}
