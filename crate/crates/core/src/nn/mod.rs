//! Minimal deterministic compute layer: tensors, the conv-block layer set,
//! manual backward passes and Adam.

mod adam;
mod gemm;
pub mod gradcheck;
mod layers;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, GroupError};
pub use layers::{
    dropout, dropout_backward, leaky_relu, leaky_relu_backward, silu, silu_backward,
    BatchNorm1d, BatchNormCache, Conv1d, ConvBlock, ConvBlockCache, ConvStack, Dense,
    BN_EPS, BN_MOMENTUM, DEFAULT_DROPOUT, DEFAULT_NEGATIVE_SLOPE,
};
pub use params::{ForwardCtx, Grads, Mode, ParamEntry, ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;
