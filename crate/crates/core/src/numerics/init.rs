//! Parameter initializers.

use super::real::Real;
use super::rng::RngState;
use super::tensor::Tensor;

/// Uniform in `±1/sqrt(fan_in)`; `fan_in` is the first extent.
pub fn fan_in_uniform<T: Real>(shape: &[usize], rng: &mut RngState) -> Tensor<T> {
    let bound = 1.0 / (shape[0] as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, rng.uniform_vec(n, -bound, bound))
        .expect("generated length matches shape")
        .with_grad()
}

/// Normal(0, std), used for embedding tables.
pub fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut RngState) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, rng.normal_vec(n, std))
        .expect("generated length matches shape")
        .with_grad()
}

pub fn zeros<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).with_grad()
}

pub fn ones<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::full(shape, T::one()).with_grad()
}
