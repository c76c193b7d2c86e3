use rand::Rng;

use crate::tensor::Tensor;

/// Uniform initialization in `±gain·sqrt(3 / fan_in)`, which gives
/// variance `gain² / fan_in`.
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, values).expect("length matches shape")
}

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
