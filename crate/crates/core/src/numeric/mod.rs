//! Dense `f64` kernels shared by every layer of the model.
//!
//! Each forward kernel that participates in training has an explicit
//! backward counterpart. Reductions always run in ascending index order so
//! results are bitwise reproducible for identical inputs.

mod matrix;
mod ops;
mod rng;

pub use matrix::Matrix;
pub use ops::{
    add_bias, add_bias_backward, init_xavier, layer_norm, layer_norm_backward, log_sum_exp,
    masked_row_softmax, matmul, matmul_a_bt, matmul_at_b, matmul_backward, relu, relu_backward,
    row_softmax, softmax_backward, LayerNormCache, MASK_PENALTY,
};
pub use rng::Rng;
