use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called on state that is not ready for it, e.g. a
    /// backward pass with no recorded forward.
    #[error("state error: {0}")]
    State(String),

    /// `Tr(R^-1 V)` vanished: the direction carries no speech evidence.
    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),

    /// The CTC target needs more frames than the posterior sequence offers.
    #[error("infeasible CTC target: {frames} frames cannot align {needed} required steps")]
    InfeasibleTarget { frames: usize, needed: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidInput(_) | Error::Data(_) | Error::Io(_) | Error::Wav(_) => 3,
            Error::State(_)
            | Error::DegenerateFilter(_)
            | Error::InfeasibleTarget { .. }
            | Error::Diverged { .. } => 4,
        }
    }
}
