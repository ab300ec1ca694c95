//! Dense tensor kernels with hand-written gradients, plus the seeded RNG.
//!
//! Everything here runs sequentially in a fixed summation order so that a
//! given seed reproduces results to the last bit.

mod kernels;
mod rng;
mod tensor;

pub use kernels::{
    dropout, dropout_grad, gelu, gelu_derivative, gelu_grad, gelu_scalar, layer_norm,
    layer_norm_grad, masked_softmax, matmul, matmul_grad, softmax, softmax_grad, DropoutMask,
    LayerNormCtx, LAYER_NORM_EPS,
};
pub use rng::Rng;
pub use tensor::Tensor;
