//! Composite layers: batch normalization and the residual block.
//!
//! Layers are borrowed views over parameter tensors that live elsewhere
//! (usually in a [`crate::network::ParamSet`]). Forward passes never mutate;
//! train-mode batch normalization reports its new running statistics in the
//! cache so the owner can commit them.

mod batchnorm;
mod residual;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNorm, BatchNormCache, BatchNormConfig, BatchNormGrads,
    BatchNormState, RunningUpdate,
};
pub use residual::{
    residual_block_backward, residual_block_forward, ConvBn, ConvBnGrads, Projection, ResidualBlock,
    ResidualCache, ResidualGrads,
};

/// Whether a forward pass uses batch statistics (and records what backward
/// needs) or frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
