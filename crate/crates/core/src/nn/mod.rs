//! Small dense tensor library: reverse-mode autodiff, the layer inventory of
//! the recognition network, Adam and a staircase learning-rate schedule.
//!
//! Tensors are single-threaded (`Rc` graph). Parameters live in a
//! [`ParamStore`], which is plain data and can be shared across threads; a
//! training step binds the store into fresh leaf tensors, runs forward and
//! backward, and hands the collected gradients to [`adam_step`].

mod checkpoint;
mod gemm;
mod init;
mod layers;
mod loss;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use init::Init;
pub use layers::{forward, ForwardCtx, LayerSpec, Mode, ParamSpec};
pub use loss::{weighted_cross_entropy, PROB_FLOOR};
pub use ops::{attention_weights, Padding};
pub use optim::{adam_step, lr_at, AdamState, LrSchedule};
pub use params::{Bound, Grads, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: String, detail: String },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any tracked tensor")]
    NoGraph,
    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid layer {layer}: {message}")]
    InvalidLayer { layer: String, message: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("total sample weight is zero")]
    ZeroWeight,
    #[error("target class {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
