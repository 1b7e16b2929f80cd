//! Dense tensors, a double-backward capable tape, MLP layers and Adam.

mod adam;
pub mod checkpoint;
mod mlp;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, BoundMlp, Layer, MlpParams, Parameters};
pub use tape::{input_grad, sigmoid, softplus, Tape, Var};
pub use tensor::Tensor;
