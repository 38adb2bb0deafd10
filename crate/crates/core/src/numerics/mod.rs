//! Minimal neural-network numerics: tensors, layer kernels with analytic
//! gradients, Adam, and finite-difference gradient checking.

mod adam;
mod gradcheck;
mod layers;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions};
pub use layers::{
    conv2d, conv2d_backward, conv2d_grads, dense, dense_backward, huber_loss, im2col, maxpool2,
    maxpool2_backward, relu, relu_backward, relu_inplace, ConvGrads, ConvShape,
};
pub use tensor::{pairwise_sum, Scalar, Tensor};

use rand::Rng;

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::from_vec(shape, data).expect("shape and length agree")
}
