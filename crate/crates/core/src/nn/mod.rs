//! Minimal differentiable layer engine: forward/backward passes over a
//! fixed layer vocabulary, SGD/RMSProp, learning-rate schedules, both loss
//! functions, finite-difference gradient checking, and checkpoint I/O.

mod checkpoint;
mod gradcheck;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{Layer, LayerKind, ParamInit};
pub use loss::{batch_loss, distance, f_loss, mse, step_factor, BatchLoss, LossKind, LossSpec};
pub use network::{ForwardTrace, Network, ParamId, ParamStore, Parameter};
pub use optim::{cyclical_lr, Algorithm, OptimizerState};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error at {layer}: {msg}")]
    Shape { layer: String, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
