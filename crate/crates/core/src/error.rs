use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical abort: non-finite state, solver breakdown, step guard.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("pressure solve did not converge after {iterations} iterations (relative residual {residual:e}); last residuals: {tail:?}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tail: Vec<f64>,
    },

    #[error("protocol error between rank {from} and rank {to}: {msg}")]
    Protocol { from: usize, to: usize, msg: String },

    #[error("rank {0} aborted")]
    PeerAbort(usize),

    #[error("step {step} (t = {t:e} s): {source}")]
    AtStep {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Strips step context and peer-abort wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_))
    }
}
