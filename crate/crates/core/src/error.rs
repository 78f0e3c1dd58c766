use thiserror::Error;

/// Errors raised by the effect engine.
///
/// Variants split into two families: input validation problems (bad labels,
/// malformed predicates, empty subsets) and numeric failures (rank
/// deficiency, non-SPD matrices, ratio guards). Callers that need to map
/// errors to process exit codes use [`EngineError::is_validation`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown arm label `{0}`")]
    UnknownArm(String),

    #[error("reference arm `{0}` does not appear in the data")]
    UnknownReferenceArm(String),

    #[error("arm_to and arm_from are both `{0}`")]
    IdenticalArms(String),

    #[error("categorical covariate `{0}` has a single level")]
    SingleLevelCategorical(String),

    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),

    #[error("empty conditioning subset: {0}")]
    EmptySubset(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cluster covariance requested but no cluster ids were supplied")]
    MissingClusterIds,

    #[error("time-dynamic effects require cluster-robust covariance")]
    DteRequiresCluster,

    #[error("unknown period {0}")]
    UnknownPeriod(i64),

    #[error("dataset has no period column")]
    MissingPeriod,

    #[error("ranking requires a posterior model (fit with a Bayesian prior)")]
    NotPosterior,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need more rows than columns: n = {n}, p = {p}")]
    TooFewRows { n: usize, p: usize },

    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("baseline too close to zero for delta-method ratio (|E(S)| = {es:e}, sd(S) = {sd:e})")]
    RatioGuard { es: f64, sd: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl EngineError {
    /// True for problems with the caller's input, false for numeric failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            EngineError::RankDeficient { .. }
                | EngineError::NotPositiveDefinite(_)
                | EngineError::RatioGuard { .. }
                | EngineError::NonFinite(_)
                | EngineError::TooFewRows { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;
