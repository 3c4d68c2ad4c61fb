use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("head L{layer}H{head} is out of bounds for a {n_layers}x{heads_per_layer} model")]
    OutOfBounds {
        layer: usize,
        head: usize,
        n_layers: usize,
        heads_per_layer: usize,
    },

    #[error("flat index {index} is out of bounds for a model with {n_heads} heads")]
    FlatOutOfBounds { index: usize, n_heads: usize },

    #[error("cannot parse head label {text:?} at position {position}: {reason}")]
    Parse {
        text: String,
        position: usize,
        reason: String,
    },

    #[error(
        "{n_measurements} measurements of {per_row} ablations cannot cover {n_heads} heads; \
         need at least {min_measurements} measurements at this sparsity"
    )]
    Coverage {
        n_measurements: usize,
        per_row: usize,
        n_heads: usize,
        min_measurements: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{n_rows} observations cannot be split into {folds} folds; use at most {n_rows} folds")]
    Folds { n_rows: usize, folds: usize },

    #[error("evaluator transport failed on query {query_id}: {message}")]
    Transport { query_id: String, message: String },

    #[error("evaluator reported an error for query {query_id}: {message}")]
    Evaluator { query_id: String, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("evaluator is not deterministic: {key} returned {first} then {second}")]
    NonDeterministic { key: String, first: f64, second: f64 },

    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),

    #[error("every hyperparameter grid point failed")]
    AllGridPointsFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the evaluator process or its transport.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::Transport { .. }
                | Error::Evaluator { .. }
                | Error::Protocol(_)
                | Error::NonDeterministic { .. }
        )
    }
}
