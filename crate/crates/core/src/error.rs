use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("degenerate mask: query row {row} has no allowed key")]
    DegenerateMask { row: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cache state error: {0}")]
    CacheState(String),

    #[error("generation window is full (fill {fill} = Wog); slide before stepping")]
    MustSlide { fill: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("corpus not found: {0}")]
    CorpusNotFound(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("ledger does not match the cost model: {0}")]
    LedgerMismatch(String),

    #[error("memory budget exceeded: {0}")]
    MemoryBudget(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
