use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown level `{0}`")]
    UnknownLevel(String),
    #[error("malformed layout: {0}")]
    MalformedLayout(String),
    #[error("episode is finished; call reset first")]
    EpisodeDone,
    #[error("invalid action id {0}")]
    InvalidAction(usize),
    #[error("planner failure: {0}")]
    Planner(String),
    #[error("invalid segmentation: {0}")]
    Segmentation(String),
    #[error("could not parse LLM response: {0}")]
    Parse(String),
    #[error("action `{0}` is not in the vocabulary")]
    Vocab(String),
    #[error("corpus line {line}: {msg}")]
    CorpusLine { line: usize, msg: String },
    #[error("LLM request failed after {attempts} attempt(s): {msg}")]
    Llm { attempts: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("skill id {skill} out of range for a library of {k} skills")]
    InvalidSkill { skill: usize, k: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("enumeration infeasible: {0}")]
    Infeasible(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
