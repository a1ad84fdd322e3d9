use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("profile row {row}: {message}")]
    ProfileRow { row: usize, message: String },

    #[error("profile table: {0}")]
    ProfileTable(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("no profile for model `{model}` at batch size {batch_size}")]
    MissingBatchSize { model: String, batch_size: u32 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("scenario parse: {0}")]
    ScenarioParse(#[from] toml::de::Error),

    #[error("serialize: {0}")]
    Serialize(#[from] toml::ser::Error),

    #[error("batcher for `{queue}` received a request for `{request}`")]
    ModelMismatch { queue: String, request: String },

    #[error("simulation invariant violated: {0}")]
    Invariant(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient ({rank} of {cols} columns independent)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("SGD diverged with eta = {eta}: parameters became non-finite")]
    Diverged { eta: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
