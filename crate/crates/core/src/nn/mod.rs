//! Minimal differentiable building blocks with hand-written gradients.

mod activation;
mod adam;
mod dense;
mod dropout;
mod embedding;
mod grn;
mod norm;
mod params;
mod tensor;

pub use activation::{elu, relu, relu_backward, sigmoid, sigmoid_scalar, softmax_rows, softmax_rows_backward};
pub use adam::Adam;
pub use dense::{Dense, InputGrad};
pub use dropout::{apply_mask, dropout_mask};
pub use embedding::Embedding;
pub use grn::{Grn, GrnTape};
pub use norm::{LayerNorm, LayerNormCache};
pub use params::Parameters;
pub use tensor::Tensor2;

pub(crate) use params::join;
pub(crate) use tensor::dot;

/// Random generator used for initialization, dropout and shuffling.
pub type NnRng = rand_chacha::ChaCha8Rng;
