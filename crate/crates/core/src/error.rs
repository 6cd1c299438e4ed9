use thiserror::Error;

#[derive(Debug, Error)]
pub enum SrmError {
    #[error("unknown proposition `{0}`")]
    UnknownProposition(String),
    #[error("label {label:#x} uses propositions outside a set of {size}")]
    LabelOutOfRange { label: u32, size: usize },
    #[error("duplicate proposition `{0}`")]
    DuplicateProposition(String),
    #[error("too many propositions ({0}); at most 32 are supported")]
    TooManyPropositions(usize),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("invalid machine: {0}")]
    InvalidMachine(String),
    #[error("trace has {labels} labels but {rewards} rewards")]
    TraceLengthMismatch { labels: usize, rewards: usize },
    #[error("invalid action {action} (environment has {actions} actions)")]
    InvalidAction { action: usize, actions: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("proposition sets differ")]
    PropositionMismatch,
    #[error("solver error: {0}")]
    Solver(String),
    #[error("solver budget exhausted at size {size}")]
    Timeout { size: usize },
    #[error("replay attempts exhausted")]
    ReplayExhausted,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SrmError> = std::result::Result<T, E>;
