//! Session format, ingestion, sliding windows, LOUO folds and class weights.
//!
//! A session is stored as `S<id>_D<day>_<position>.csv` with header
//! `timestamp,hbc,ax,ay,az,gx,gy,gz,label` plus a `.json` metadata sidecar and,
//! when repetition ground truth exists, a `.counts.json` sidecar.

use std::path::{Path, PathBuf};

mod dataset;
mod folds;
mod label;
mod session;
mod weights;
mod window;

pub use dataset::{load_dataset, parse_stem, CountsSidecar, Dataset, DatasetSession, SegmentCount};
pub use folds::{leakage_scan, make_louo_folds, Fold, FoldPlan};
pub use label::{ActivityLabel, UnknownLabel};
pub use session::{
    parse_frames, parse_session, read_meta, write_frames, write_session, ClothesMaterial, IngestWarning,
    ParsedSession, Position, SampleFrame, SessionMeta, SessionRecording, SessionRef, SessionSchema, SoleHeight,
    SoleMaterial, WearingConfig, CANONICAL_HEADER, SAMPLING_RATE_HZ,
};
pub use weights::{balanced_class_weights, compute_sample_weights};
pub use window::{
    window_count, window_session, LabelRule, SignalSource, WindowInstance, WindowParams, N_CHANNELS, WINDOW_LEN,
    WINDOW_STRIDE,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: row {row} (line {line}): {message}", path.display())]
    Parse { path: PathBuf, line: usize, row: usize, message: String },
    #[error("{}: row {row}: {message}", path.display())]
    Integrity { path: PathBuf, row: usize, message: String },
    #[error("{}: missing required column `{column}`", path.display())]
    Schema { path: PathBuf, column: String },
    #[error("{}: {message}", path.display())]
    Metadata { path: PathBuf, message: String },
    #[error("{}: no session files found", path.display())]
    EmptyDataset { path: PathBuf },
    #[error("no instances to weight")]
    NoInstances,
    #[error("leave-one-user-out needs at least 2 subjects, found {found}")]
    TooFewSubjects { found: usize },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}
