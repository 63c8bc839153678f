//! From-scratch CNN: layer kernels, the fused network, Adam, checkpoints.

pub mod checkpoint;
pub mod layers;
mod model;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, ParamBlock};
pub use model::{mse_loss, ConvBlock, DenseLayer, NetConfig, PopularityNet, Sample};
pub use optim::Adam;
pub use tensor::Tensor;
