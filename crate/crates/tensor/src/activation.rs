//! Pointwise nonlinearities.

use crate::counter;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// Exact `x·Φ(x)` with the Gaussian CDF written via `erf`.
    Gelu,
    LeakyRelu(f64),
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.1;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

impl Activation {
    pub fn apply<T: Real>(&self, v: T) -> T {
        match *self {
            Activation::Gelu => T::from_f64(gelu(v.to_f64())),
            Activation::LeakyRelu(slope) => {
                if v < T::ZERO {
                    v * T::from_f64(slope)
                } else {
                    v
                }
            }
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative at input `x`, given the forward output `y`.
    pub fn derivative<T: Real>(&self, x: T, y: T) -> T {
        match *self {
            Activation::Gelu => T::from_f64(gelu_grad(x.to_f64())),
            Activation::LeakyRelu(slope) => {
                if x < T::ZERO {
                    T::from_f64(slope)
                } else {
                    T::ONE
                }
            }
            Activation::Sigmoid => y * (T::ONE - y),
        }
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        counter::add_elementwise(x.len());
        x.map(|v| self.apply(v))
    }

    pub fn backward<T: Real>(&self, x: &Tensor<T>, y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
        Tensor::from_fn(x.shape(), |i| {
            gout.data()[i] * self.derivative(x.data()[i], y.data()[i])
        })
        .expect("shape taken from an existing tensor")
    }
}
