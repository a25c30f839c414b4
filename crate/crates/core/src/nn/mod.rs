//! Minimal differentiable-computation substrate: tensors, a reverse-mode
//! tape, layers, optimizers, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{attention_support, dense, softmax, Activation, Dense, GatLayer, LstmCell, Mlp, MultiHeadAttention};
pub use optim::{OptimConfig, OptimKind, Optimizer};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
