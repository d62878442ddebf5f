//! Crate-wide error type.
//!
//! Every failure mode carries a stable, machine-readable name as the first
//! token of its `Display` output so batch drivers can report structured
//! errors on stderr.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- panel ingestion / transforms ---
    #[error("MissingColumn: column '{0}' not found in header")]
    MissingColumn(String),
    #[error("NonNumericCell: row {row}, column '{column}': cannot parse '{value}'")]
    NonNumericCell { row: usize, column: String, value: String },
    #[error("DuplicateUnitYear: unit '{unit}', year {year} appears more than once")]
    DuplicateUnitYear { unit: String, year: i32 },
    #[error("NegativeTreatment: row {row} has treatment {value} < 0")]
    NegativeTreatment { row: usize, value: f64 },
    #[error("NoConvergence: {0}")]
    NoConvergence(String),
    #[error("ZeroVariance: column '{0}' has zero variance")]
    ZeroVariance(String),

    // --- forests ---
    #[error("TooFewRows: need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("DegenerateCovariates: all rows have identical covariates")]
    DegenerateCovariates,
    #[error("SchemaMismatch: {0}")]
    SchemaMismatch(String),
    #[error("InsufficientTreatmentVariation: treatment residuals are numerically constant")]
    InsufficientTreatmentVariation,
    #[error("ZeroWeightTarget: no tree places target row {0} with any estimate row")]
    ZeroWeightTarget(usize),
    #[error("NoSplits: the forest contains no splits")]
    NoSplits,

    // --- estimators ---
    #[error("RankDeficient: {0}")]
    RankDeficient(String),
    #[error("ZeroTreatmentVariation: treatment residuals have zero sum of squares")]
    ZeroTreatmentVariation,
    #[error("ZeroCounterfactual: mean counterfactual outcome must be > 0")]
    ZeroCounterfactual,
    #[error("DegenerateR2: controlled and uncontrolled R-squared are equal")]
    DegenerateR2,
    #[error("TooFewClusters: need at least {needed} clusters, got {got}")]
    TooFewClusters { needed: usize, got: usize },

    // --- overlap / heterogeneity ---
    #[error("EmptyAfterTrim: no rows remain after percentile trimming")]
    EmptyAfterTrim,
    #[error("DegenerateGroup: group '{0}' has fewer than 2 values")]
    DegenerateGroup(String),
    #[error("EmptyGroup: subgroup '{0}' contains no units")]
    EmptyGroup(String),
    #[error("DegenerateQuartiles: first and third CAPE quartiles coincide")]
    DegenerateQuartiles,

    // --- policy ---
    #[error("ZeroClaims: reference sample has zero total claims")]
    ZeroClaims,
    #[error("EmptyReference: reference dataset contains no rows")]
    EmptyReference,

    // --- synthetic data / config ---
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("InvalidInput: {0}")]
    InvalidInput(String),

    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad configuration or malformed input data,
    /// as opposed to numerical failures during estimation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::NonNumericCell { .. }
                | Error::DuplicateUnitYear { .. }
                | Error::NegativeTreatment { .. }
                | Error::SchemaMismatch(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::InvalidInput(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}
