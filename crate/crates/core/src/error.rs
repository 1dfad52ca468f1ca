use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("episode already complete (t = {t}, horizon {horizon})")]
    EpisodeComplete { t: usize, horizon: usize },

    #[error("episode incomplete: finalize called at t = {t} before horizon {horizon} was reached")]
    IncompleteEpisode { t: usize, horizon: usize },

    #[error("policy state error: {0}")]
    State(String),

    #[error("training diverged at step {step}: {detail}")]
    Training { step: usize, detail: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
