use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has norm below 1e-12")]
    ZeroRow { row: usize },
    #[error("zero vector in similarity")]
    ZeroVector,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("insufficient positives: requested {requested}, available {available}")]
    InsufficientPositives { requested: usize, available: usize },
    #[error("insufficient rows: requested {requested}, available {available}")]
    InsufficientRows { requested: usize, available: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("invalid lambda {0}")]
    InvalidLambda(f64),
    #[error("batch has no full labels")]
    MissingLabels,
    #[error("dataset has no ground-truth labels")]
    MissingTruth,
    #[error("empty augmentation set")]
    EmptyAugmentationSet,
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("no labeled positives")]
    EmptyPositives,
    #[error("no unlabeled rows")]
    EmptyUnlabeled,
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("empty set")]
    EmptySet,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("empty domain: {0}")]
    EmptyDomain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
