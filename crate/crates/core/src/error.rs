use crate::counting::CountError;
use crate::dataio::DataError;
use crate::evaluate::EvalError;
use crate::nn::NnError;
use crate::signal::SignalError;
use crate::synth::SynthError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Umbrella error for callers that cross module boundaries (the CLI mostly).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Count(#[from] CountError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
