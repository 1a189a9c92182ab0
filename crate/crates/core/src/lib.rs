//! Workout recognition, repetition counting and user authentication from
//! wrist/leg/pocket-worn IMU and body-capacitance (HBC) sensing.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dataio`] — session CSV/JSON format, sliding windows, leave-one-user-out folds
//! * [`signal`] — magnitude, Fourier low-pass smoothing, peak detection
//! * [`counting`] — per-segment repetition counting and count fusion
//! * [`nn`] — a small reverse-mode autodiff tensor library with the layers,
//!   optimizer and schedule the network needs
//! * [`model`] — the CNN + windowed self-attention + dilated-conv classifier and
//!   the CNN-only authentication variant
//! * [`evaluate`] — training loop, LOUO driver, metrics and report writers
//! * [`synth`] — a synthetic session generator with known ground truth

pub mod counting;
pub mod dataio;
pub mod evaluate;
pub mod model;
pub mod nn;
pub mod signal;
pub mod synth;

mod error;
mod seed;

pub use counting::{CountConfig, CountResult, CountSource, ExerciseSegment};
pub use dataio::{
    ActivityLabel, FoldPlan, Position, SampleFrame, SessionRecording, SignalSource,
    WearingConfig, WindowInstance,
};
pub use error::{Error, Result};
pub use evaluate::{EvalReport, Metrics, TrainSpec};
pub use model::{ModelConfig, Network, TrainedModel};
pub use nn::Tensor;
pub use seed::derive_seed;
pub use signal::{PeakParams, Series};
pub use synth::{DatasetConfig, FrontEndModel, MotionScript};
