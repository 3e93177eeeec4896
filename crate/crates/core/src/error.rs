use thiserror::Error;

/// Errors raised while validating data, fitting, or running simulations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no observations")]
    EmptyInput,

    #[error("treatment value {value} for pair `{pair_id}`, unit `{unit_id}` is not 0 or 1")]
    NonBinaryTreatment {
        pair_id: String,
        unit_id: String,
        value: i64,
    },

    #[error("unit `{unit_id}` in pair `{pair_id}` has rows with different treatments")]
    MixedTreatmentWithinUnit { pair_id: String, unit_id: String },

    #[error("pair `{pair_id}` has no treated-versus-control contrast")]
    DegeneratePair { pair_id: String },

    #[error("outcome for pair `{pair_id}`, unit `{unit_id}` is not finite")]
    NonFiniteOutcome { pair_id: String, unit_id: String },

    #[error("pair `{pair_id}` has {units} units; a paired design needs exactly 2")]
    NotPaired { pair_id: String, units: usize },

    #[error("stratum `{pair_id}` has {units} units; at least 2 are required")]
    StratumTooSmall { pair_id: String, units: usize },

    #[error("assignment does not match the experiment layout: {0}")]
    AssignmentMismatch(String),

    #[error("treatment does not vary: {treated} treated and {control} control observations")]
    NoVariationInTreatment { treated: usize, control: usize },

    #[error("fit was produced by the {found} model, {expected} was required")]
    ModelMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degrees-of-freedom correction undefined for n = {n}, K = {k}")]
    DegenerateDof { n: usize, k: usize },

    #[error("residual sums are all zero, the variance ratio is undefined")]
    ZeroResiduals,

    #[error("variance estimate is zero, the t-statistic is undefined")]
    ZeroVariance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the input data rather than by a numeric
    /// failure later in the pipeline.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput
                | Error::NonBinaryTreatment { .. }
                | Error::MixedTreatmentWithinUnit { .. }
                | Error::DegeneratePair { .. }
                | Error::NonFiniteOutcome { .. }
                | Error::NotPaired { .. }
                | Error::StratumTooSmall { .. }
                | Error::AssignmentMismatch(_)
                | Error::NoVariationInTreatment { .. }
                | Error::Parse { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
