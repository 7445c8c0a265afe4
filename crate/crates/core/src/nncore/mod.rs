//! Minimal tensor and layer library for the fully convolutional encoder.

mod adam;
mod fcn;
pub mod layers;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fcn::{
    default_blocks, fcn_forward, param_count, BlockSpec, ConvBlock, Dense, Fcn, FcnConfig,
    FcnGrads, ForwardOutput, Tape,
};
pub use layers::TrainMode;
pub use scalar::{gemm, Real};
pub use tensor::{Matrix, Tensor3};
