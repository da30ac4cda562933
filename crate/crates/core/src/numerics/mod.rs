//! Dense tensors, activations, seeded randomness and the finite-difference
//! gradient oracle shared by every other module.

mod ops;
mod rng;
mod tensor;

pub use ops::{
    activation, affine_apply, finite_diff_grad, rms_norm, rms_norm_backward, sigmoid, silu, softplus, softplus_inverse, Activation,
};
pub use rng::SeededRng;
pub use tensor::{AnyTensor, Precision, Real, Tensor, TENSOR_MAGIC, TENSOR_VERSION};

/// Relative error `|a - b| / max(|b|, floor)` in the max norm over all elements.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
