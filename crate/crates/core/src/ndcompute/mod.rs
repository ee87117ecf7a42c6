//! Dense tensors and a small reverse-mode differentiation core with the
//! convolution, pooling, dense, softmax and rectifier operations used by
//! units and classifier heads.

mod checkpoint;
mod conv;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use params::{
    forward_conv_stack, forward_dense_head, sgd_step, ConvLayerSpec, ConvStackSpec, DenseSpec, Param, ParamSet,
};
pub use tape::{Tape, Var};
pub use tensor::Tensor;


#[derive(Debug, Error)]
pub enum NdError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
