//! A small reverse-mode autograd for convolutional networks on the CPU.
//!
//! Only the operations the detector and the landmark network need are
//! provided: square-kernel convolution (im2col + GEMM), batch norm, ReLU,
//! elementwise sum, nearest upsampling and channel concatenation.

mod graph;
pub mod kernels;
mod layers;
pub mod loss;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, RunningUpdate, Var};
pub use layers::{BatchNorm2d, Conv2d, ConvBn};
pub use optim::{apply_running_updates, Adam, Optimizer, Sgd};
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed weight file: {0}")]
    Format(String),
}
