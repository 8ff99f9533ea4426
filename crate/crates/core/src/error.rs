use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no samples")]
    NoSamples,
    #[error("degenerate weights")]
    DegenerateWeights,
    #[error("variance undefined: {0}")]
    VarianceUndefined(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ambiguous cutpoint: the RMST difference changes sign {0} times")]
    AmbiguousCutpoint(usize),
    #[error("empty enrichment region: cut {cut} is at or above the support upper bound {upper}")]
    EmptyEnrichmentRegion { cut: f64, upper: f64 },
    #[error("patient enrolled at {enroll} after analysis time {analysis}")]
    EnrolledAfterAnalysis { enroll: f64, analysis: f64 },
    #[error("empty interval {0}: merge it with a neighbour")]
    EmptyInterval(usize),
    #[error("rank-deficient design matrix")]
    RankDeficient,
    #[error("t* = {t_star} beyond follow-up (max observed time {max_observed} in arm {arm})")]
    BeyondFollowUp {
        t_star: f64,
        max_observed: f64,
        arm: u8,
    },
    #[error("singular design")]
    SingularDesign,
    #[error("zero variance")]
    ZeroVariance,
    #[error("no Stage-I positives")]
    NoStageOnePositives,
    #[error("calibration infeasible: target moments outside the convex hull of the sample")]
    CalibrationInfeasible,
    #[error("calibration did not converge (residual {0:e})")]
    CalibrationNotConverged(f64),
    #[error("censoring support violated at Y = {0}")]
    CensoringSupport(f64),
    #[error("missing outcome model")]
    MissingOutcomeModel,
    #[error("no feasible alpha-tilde in grid (minimum achieved family-wise error {0})")]
    NoFeasibleAlpha(f64),
    #[error("target power {0} unreachable")]
    UnreachablePower(f64),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad user input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidInput(_))
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
