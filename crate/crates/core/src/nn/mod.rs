//! Minimal differentiable kernels: dense and convolutional layers, a tape
//! for reverse-mode gradients, optimizers and a JSON checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{Activation, Conv2d, ConvEncoder, Dense, Mlp, Module};
pub use optim::{sgd_step, Optimizer, OptimizerKind};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
