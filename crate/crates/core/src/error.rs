use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel is reducible; strongly connected components: {components:?}")]
    Reducible { components: Vec<Vec<usize>> },

    #[error("invalid probability vector: {0}")]
    InvalidProb(String),

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (best value {best_value}, gradient norm {grad_norm})")]
    NoConvergence {
        iterations: usize,
        best_value: f64,
        grad_norm: f64,
    },

    #[error("state explosion: {0}")]
    StateExplosion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn context(self, ctx: impl Into<String>) -> Error {
        Error::Context {
            context: ctx.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
