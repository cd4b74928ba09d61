use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: column `{column}` must be 0 or 1, found `{value}`")]
    NonBinaryCode {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: column `{column}` is not a number: `{value}`")]
    MalformedNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: expected {expected} covariates, found {found}")]
    CovariateLength {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty cell (d={d}, m={m}, t={t})")]
    EmptyCell { d: u8, m: u8, t: u8 },

    #[error("cluster `{0}` changes treatment or mediator status between periods")]
    InconsistentPanel(String),

    #[error("covariate design matrix is rank deficient")]
    RankDeficientDesign,

    #[error("no covariates to residualize on")]
    NoCovariates,

    #[error("probability {0} is outside the admissible range")]
    QOutOfRange(f64),

    #[error("empirical distribution needs at least one finite value")]
    EmptyDistribution,

    #[error("non-finite value {0} in sample")]
    NonFiniteValue(f64),

    #[error("mixture weights violate w_pos - w_neg = 1 (w_pos={w_pos}, w_neg={w_neg})")]
    WeightIdentityViolated { w_pos: f64, w_neg: f64 },

    #[error("evaluation grid is empty")]
    EmptyGrid,

    #[error("complier share {p_c:.4} is below the minimum {min:.4}")]
    WeakCompliers { p_c: f64, min: f64 },

    #[error("always-taker share {p_a:.4} is below the minimum {min:.4}")]
    NoAlwaysTakers { p_a: f64, min: f64 },

    #[error("cell (d={d}, m={m}) has no observations, estimand unavailable")]
    CellUnavailable { d: u8, m: u8 },

    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailedReplicates { failed: usize, total: usize },

    #[error("group d={d} in period {period} has {n} observations, need at least 2")]
    EmptyGroup { d: u8, period: u8, n: usize },

    #[error("attrition check requires panel data")]
    NotPanel,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonBinaryCode { .. } => "NonBinaryCode",
            Error::MalformedNumber { .. } => "MalformedNumber",
            Error::CovariateLength { .. } => "CovariateLength",
            Error::EmptyCell { .. } => "EmptyCell",
            Error::InconsistentPanel(_) => "InconsistentPanel",
            Error::RankDeficientDesign => "RankDeficientDesign",
            Error::NoCovariates => "NoCovariates",
            Error::QOutOfRange(_) => "QOutOfRange",
            Error::EmptyDistribution => "EmptyDistribution",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::WeightIdentityViolated { .. } => "WeightIdentityViolated",
            Error::EmptyGrid => "EmptyGrid",
            Error::WeakCompliers { .. } => "WeakCompliers",
            Error::NoAlwaysTakers { .. } => "NoAlwaysTakers",
            Error::CellUnavailable { .. } => "CellUnavailable",
            Error::TooManyFailedReplicates { .. } => "TooManyFailedReplicates",
            Error::EmptyGroup { .. } => "EmptyGroup",
            Error::NotPanel => "NotPanel",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Csv(_) => "Csv",
            Error::Io(_) => "Io",
        }
    }

    /// Errors caused by malformed input or configuration, as opposed to
    /// estimation failures on valid data.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::NonBinaryCode { .. }
                | Error::MalformedNumber { .. }
                | Error::CovariateLength { .. }
                | Error::EmptyCell { .. }
                | Error::InconsistentPanel(_)
                | Error::NoCovariates
                | Error::InvalidConfig(_)
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}
