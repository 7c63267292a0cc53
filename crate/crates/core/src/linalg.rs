//! Dense factorizations shared by the tape operations and the exact GP.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Lower Cholesky factor of the lower triangle of `a`.
///
/// Fails with the 1-based index of the first leading minor that is not
/// positive definite.
pub fn cholesky<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(TensorError::shape("cholesky", a.shape(), a.shape()));
    }
    let n = a.rows();
    let src = a.data();
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut d = src[j * n + j];
        for k in 0..j {
            d = d - l[j * n + k] * l[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(TensorError::NotPositiveDefinite { minor: j + 1 });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = src[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(Tensor::from_parts(vec![n, n], l))
}

/// Which triangle of a square matrix holds the operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

/// Solves `op(A) X = B` where `A` is read from `triangle` and
/// `op(A) = Aᵀ` when `transpose` is set. `B` may be `[n]` or `[n, p]`.
pub fn solve_triangular<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    triangle: Triangle,
    transpose: bool,
) -> Result<Tensor<T>, TensorError> {
    if a.rank() != 2 || a.rows() != a.cols() || b.rank() == 0 || b.shape()[0] != a.rows() {
        return Err(TensorError::shape("triangular_solve", a.shape(), b.shape()));
    }
    let n = a.rows();
    let p = if b.rank() == 1 { 1 } else { b.cols() };
    let ad = a.data();
    // Effective orientation: solving with Lᵀ is an upper solve.
    let lower_eff = (triangle == Triangle::Lower) != transpose;
    let at = |i: usize, j: usize| -> T {
        if transpose {
            ad[j * n + i]
        } else {
            ad[i * n + j]
        }
    };
    for i in 0..n {
        if at(i, i) == T::zero() {
            return Err(TensorError::SingularTriangular { index: i });
        }
    }
    let mut x = b.data().to_vec();
    for col in 0..p {
        if lower_eff {
            for i in 0..n {
                let mut s = x[i * p + col];
                for k in 0..i {
                    s = s - at(i, k) * x[k * p + col];
                }
                x[i * p + col] = s / at(i, i);
            }
        } else {
            for i in (0..n).rev() {
                let mut s = x[i * p + col];
                for k in i + 1..n {
                    s = s - at(i, k) * x[k * p + col];
                }
                x[i * p + col] = s / at(i, i);
            }
        }
    }
    Ok(Tensor::from_parts(b.shape().to_vec(), x))
}

/// `log det(L Lᵀ)` for a lower Cholesky factor.
pub fn logdet_from_cholesky<T: Scalar>(l: &Tensor<T>) -> T {
    let n = l.rows();
    (0..n).map(|i| l.get(i, i).ln()).sum::<T>() * T::of(2.0)
}

/// Solves `(L Lᵀ) X = B`.
pub fn cholesky_solve<T: Scalar>(l: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let y = solve_triangular(l, b, Triangle::Lower, false)?;
    solve_triangular(l, &y, Triangle::Lower, true)
}

/// Diagonal jitter schedule applied before factorizing kernel matrices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterPolicy {
    pub initial: f64,
    pub factor: f64,
    pub max: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-6,
            factor: 10.0,
            max: 1e-2,
        }
    }
}

impl JitterPolicy {
    /// Same escalation, but the first attempt adds nothing. Used for
    /// matrices that already carry a noise term on the diagonal.
    pub fn with_zero_start(self) -> impl Iterator<Item = f64> {
        std::iter::once(0.0).chain(self.schedule())
    }

    pub fn schedule(self) -> impl Iterator<Item = f64> {
        let mut next = Some(self.initial);
        std::iter::from_fn(move || {
            let cur = next?;
            let following = cur * self.factor;
            // tolerate rounding in the geometric sequence
            next = (following <= self.max * (1.0 + 1e-9)).then_some(following);
            Some(cur)
        })
    }
}

/// Cholesky of `a + εI` for the first ε of the schedule that succeeds.
pub fn cholesky_jittered<T: Scalar>(
    a: &Tensor<T>,
    schedule: impl IntoIterator<Item = f64>,
) -> Result<(Tensor<T>, f64), TensorError> {
    let mut last = TensorError::NotPositiveDefinite { minor: 1 };
    for eps in schedule {
        let mut m = a.clone();
        if eps > 0.0 {
            let n = m.rows();
            for i in 0..n {
                let v = m.get(i, i) + T::of(eps);
                m.set(i, i, v);
            }
        }
        match cholesky(&m) {
            Ok(l) => return Ok((l, eps)),
            Err(e @ TensorError::NotPositiveDefinite { .. }) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}
