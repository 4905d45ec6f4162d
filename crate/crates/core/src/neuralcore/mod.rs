//! Dense tensors, a small reverse-mode autodiff tape, the layers the models
//! are built from, cross-entropy, SGD and the one-cycle learning-rate schedule.

mod config;
pub mod gradcheck;
mod graph;
mod kernels;
mod layers;
mod loss;
mod optim;
mod params;
mod tensor;

pub use config::{Char2Token, ConfigError, ModelConfig, SpanSource, DEFAULT_MAX_LR};
pub use graph::{Gradients, Graph, Var};
pub use layers::{BiLstm, Conv1d, Embedding, Linear, LstmDirection, ResidualBlock};
pub use loss::softmax_xent;
pub use optim::{one_cycle_lr, sgd_step, LrSchedule};
pub use params::{ParamId, ParamStore};
pub use tensor::{Scalar, Tensor, TensorError};

#[cfg(test)]
mod tests;
