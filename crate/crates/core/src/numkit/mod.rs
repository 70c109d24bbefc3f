//! Dense `f64` tensors and the differentiable operations the fuser and view
//! transforms are built from.
//!
//! Every operation comes as a forward function plus a hand-written backward
//! function. There is no tape: composite layers keep their own caches and
//! call the backward functions in reverse order.

mod adamw;
mod conv;
pub mod gradcheck;
mod io;
mod ops;
mod params;
mod sample;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState, FULL_SCALE_LEARNING_RATE};
pub use conv::{
    avgpool, avgpool2, avgpool_backward, concat_channels, conv2d, conv2d_backward, split_channels, upsample_nearest,
    upsample_nearest_backward,
};
pub use gradcheck::{gradcheck, DiffOp, GradcheckReport, FD_STEP};
pub use io::{read_tensor, read_tensors, write_tensor, write_tensors};
pub use ops::{
    bce_with_logits_mean, gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, linear_row,
    linear_row_backward, map_to_tokens, sigmoid, softmax_backward, softmax_in_place, softmax_lastdim, tokens_to_map,
    LayerNormCache,
};
pub use params::{Conv2d, LayerNorm, Linear, ParamSet};
pub use sample::{bilinear_sample, bilinear_sample_backward, Layout, SampleSite};
pub use tensor::Tensor;
