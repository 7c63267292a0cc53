use serde::{Deserialize, Serialize};

use crate::autodiff::{pairwise_sq_dist, Tensor, TensorError, Var};
use crate::gp::GpError;
use crate::scalar::Scalar;

/// Squared-exponential kernel `s² exp(−‖a − b‖² / (2ℓ²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeKernel<T = f64> {
    pub lengthscale: T,
    pub outputscale: T,
}

impl<T: Scalar> SeKernel<T> {
    pub fn new(lengthscale: T, outputscale: T) -> Result<Self, GpError> {
        let ok = |v: T| v.is_finite() && v > T::zero();
        if !ok(lengthscale) || !ok(outputscale) {
            return Err(GpError::Invalid(format!(
                "kernel parameters must be positive and finite (lengthscale {lengthscale}, outputscale {outputscale})"
            )));
        }
        Ok(Self {
            lengthscale,
            outputscale,
        })
    }

    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let d: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.outputscale * (-d / (T::of(2.0) * self.lengthscale * self.lengthscale)).exp()
    }
}

/// `K[i, j] = k(aᵢ, bⱼ)` for the rows of `a` and `b`.
pub fn kernel_matrix<T: Scalar>(kernel: &SeKernel<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, GpError> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "kernel_matrix",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(GpError::Invalid("non-finite kernel input".into()));
    }
    let coef = -T::one() / (T::of(2.0) * kernel.lengthscale * kernel.lengthscale);
    Ok(pairwise_sq_dist(a, b).map(|d| kernel.outputscale * (d * coef).exp()))
}

/// Kernel matrix on the tape with constrained `lengthscale` and
/// `outputscale` scalars.
pub fn kernel_on_tape<'t, T: Scalar>(
    lengthscale: Var<'t, T>,
    outputscale: Var<'t, T>,
    a: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<Var<'t, T>, TensorError> {
    let tape = a.tape();
    let coef = tape.scalar(T::of(-0.5)).div(lengthscale.square()?)?;
    a.pairwise_sq_dist(b)?.mul(coef)?.exp()?.mul(outputscale)
}
