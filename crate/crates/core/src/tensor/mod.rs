//! Dense numerical core: row-major matrices, activations, bias-free
//! perceptrons with manual backpropagation, an adaptive-moment optimizer and
//! a JSON checkpoint format.

mod checkpoint;
mod matrix;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use matrix::{relu, sigmoid, softmax, Matrix};
pub use mlp::{Head, Mlp, MlpCache};
pub use optim::{Adam, AdamConfig, Direction};
