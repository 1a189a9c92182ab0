//! Training loop, leave-one-user-out and day-held-out drivers, metrics and
//! report writers.

use std::path::PathBuf;

use crate::dataio::{ActivityLabel, DataError};
use crate::nn::NnError;

mod metrics;
mod report;
mod runs;
mod train;

pub use metrics::{compute_metrics, Metrics};
pub use report::{confusion_csv, confusion_svg, fmt_sig, report_key, write_report_bundle};
pub use runs::{rerun_stability, run_auth, run_louo, EvalReport, FoldReport, Stability};
pub use train::{split_validation, train_fold, EarlyStopping, StopDecision, TrainSpec, TrainingSet};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid training spec: {0}")]
    InvalidSpec(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set has {0} distinct class(es), need at least 2")]
    TooFewClasses(usize),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss} (lr {lr})")]
    Divergence { epoch: usize, step: u64, loss: f64, lr: f64 },
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no predictions to score")]
    NoPredictions,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("leakage: {windows} test-subject windows found in training sets")]
    Leakage { windows: usize },
    #[error("no {0} windows in the data")]
    ActivityAbsent(ActivityLabel),
    #[error("authentication needs at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("day-held-out evaluation needs at least 2 days, found {0}")]
    TooFewDays(usize),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
