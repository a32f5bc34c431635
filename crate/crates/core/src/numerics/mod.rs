//! Dense tensors, reverse-mode differentiation and the kernels the model
//! needs (3D convolution, max pooling, small matrix algebra).

mod conv;
pub mod gradcheck;
pub mod snapshot;
mod tape;
mod tensor;

use rand::Rng;

pub use gradcheck::{gradcheck, GradCheck, TensorReport};
pub use tape::{bce_terms, order_free_sum, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}
