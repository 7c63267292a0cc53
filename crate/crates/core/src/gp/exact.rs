use crate::autodiff::Tensor;
use crate::gp::{kernel_matrix, GaussianPrediction, GpError, SeKernel, MIN_VARIANCE};
use crate::linalg::{self, JitterPolicy, Triangle};
use crate::scalar::Scalar;

/// Exact GP regression with a constant mean and Gaussian noise.
///
/// Serves as the reference the sparse model is checked against; every
/// quantity is computed from one Cholesky factor of `K(X, X) + σ²I`.
#[derive(Clone, Debug)]
pub struct ExactGp<T = f64> {
    x: Tensor<T>,
    y: Vec<T>,
    pub kernel: SeKernel<T>,
    pub noise: T,
    pub mean: T,
    pub jitter: JitterPolicy,
}

struct Factor<T> {
    chol: Tensor<T>,
    /// Λ⁻¹ (y − μ₀)
    alpha: Tensor<T>,
}

impl<T: Scalar> ExactGp<T> {
    /// `x` is `[n, m]` (n may be zero), `y` has length n.
    pub fn new(x: Tensor<T>, y: Vec<T>, kernel: SeKernel<T>, noise: T, mean: T) -> Result<Self, GpError> {
        if x.rank() != 2 || x.rows() != y.len() {
            return Err(GpError::Invalid(format!(
                "{} inputs for {} targets",
                x.shape().first().copied().unwrap_or(0),
                y.len()
            )));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) || !mean.is_finite() {
            return Err(GpError::Invalid("non-finite training data".into()));
        }
        if !(noise > T::zero()) || !noise.is_finite() {
            return Err(GpError::Invalid(format!("noise variance must be positive, got {noise}")));
        }
        Ok(Self {
            x,
            y,
            kernel,
            noise,
            mean,
            jitter: JitterPolicy::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.x
    }

    pub fn targets(&self) -> &[T] {
        &self.y
    }

    fn factor(&self) -> Result<Factor<T>, GpError> {
        let n = self.len();
        let mut lambda = kernel_matrix(&self.kernel, &self.x, &self.x)?;
        for i in 0..n {
            lambda.set(i, i, lambda.get(i, i) + self.noise);
        }
        // Λ already carries σ² on its diagonal; jitter only on failure.
        let (chol, _) = linalg::cholesky_jittered(&lambda, self.jitter.with_zero_start())?;
        let r = Tensor::column(self.y.iter().map(|&v| v - self.mean).collect());
        let alpha = linalg::cholesky_solve(&chol, &r)?;
        Ok(Factor { chol, alpha })
    }

    /// Posterior predictive at the rows of `xs`.
    pub fn posterior(&self, xs: &Tensor<T>) -> Result<Vec<GaussianPrediction<T>>, GpError> {
        let q = xs.rows();
        let prior = self.kernel.outputscale;
        if self.is_empty() {
            return Ok(vec![
                GaussianPrediction {
                    mean: self.mean,
                    latent_var: prior,
                    noise_var: self.noise,
                };
                q
            ]);
        }
        let f = self.factor()?;
        let k_sx = kernel_matrix(&self.kernel, xs, &self.x)?;
        let mean = k_sx.matmul(&f.alpha)?;
        // v = L⁻¹ K(X, X*)
        let v = linalg::solve_triangular(&f.chol, &k_sx.transpose(), Triangle::Lower, false)?;
        let n = self.len();
        Ok((0..q)
            .map(|j| {
                let reduction: T = (0..n).map(|i| v.get(i, j) * v.get(i, j)).sum();
                GaussianPrediction {
                    mean: self.mean + mean.get(j, 0),
                    latent_var: (prior - reduction).max(T::of(MIN_VARIANCE)),
                    noise_var: self.noise,
                }
            })
            .collect())
    }

    /// `−½ rᵀΛ⁻¹r − ½ log|Λ| − (n/2) log 2π` with `r = y − μ₀`.
    pub fn log_marginal_likelihood(&self) -> Result<T, GpError> {
        if self.is_empty() {
            return Ok(T::zero());
        }
        let f = self.factor()?;
        let n = self.len();
        let quad: T = (0..n).map(|i| (self.y[i] - self.mean) * f.alpha.get(i, 0)).sum();
        let logdet = linalg::logdet_from_cholesky(&f.chol);
        let half = T::of(0.5);
        Ok(-half * quad - half * logdet - half * T::of(n as f64) * (T::of(2.0) * T::PI()).ln())
    }
}
