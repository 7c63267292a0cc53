use rayon::prelude::*;

use crate::autodiff::{BoundParams, ParamStore, Tape, Tensor, TensorError, Var};
use crate::gp::{kernel_matrix, kernel_on_tape, GaussianPrediction, GpError, SeKernel, MIN_VARIANCE};
use crate::linalg::{self, JitterPolicy, Triangle};
use crate::scalar::{softplus, softplus_inv, Scalar};

/// Lower bound on the observation noise variance; the unconstrained noise
/// parameter maps to `softplus(raw) + NOISE_FLOOR`.
pub const NOISE_FLOOR: f64 = 1e-6;

pub const P_INDUCING: &str = "gp.inducing";
pub const P_VAR_MEAN: &str = "gp.var_mean";
pub const P_VAR_CHOL: &str = "gp.var_chol_raw";
pub const P_LENGTHSCALE: &str = "gp.lengthscale_raw";
pub const P_OUTPUTSCALE: &str = "gp.outputscale_raw";
pub const P_NOISE: &str = "gp.noise_raw";
pub const P_MEAN: &str = "gp.mean";

/// Rows per parallel prediction chunk.
const PREDICT_CHUNK: usize = 256;

/// Sparse variational GP in constrained (natural) units.
#[derive(Clone, Debug, PartialEq)]
pub struct SvgpState<T = f64> {
    /// Inducing locations `Z`, `[M, m]`.
    pub inducing: Tensor<T>,
    /// Variational mean `m_v`, length M.
    pub var_mean: Vec<T>,
    /// Lower-triangular factor `L_v` of the variational covariance `S = L_v L_vᵀ`.
    pub var_chol: Tensor<T>,
    pub kernel: SeKernel<T>,
    pub noise: T,
    pub mean: T,
    pub jitter: JitterPolicy,
}

impl<T: Scalar> SvgpState<T> {
    /// State whose variational distribution equals the prior over `f_Z`.
    pub fn at_prior(inducing: Tensor<T>, kernel: SeKernel<T>, noise: T, mean: T) -> Result<Self, GpError> {
        let jitter = JitterPolicy::default();
        if inducing.rank() != 2 || inducing.rows() == 0 || inducing.cols() == 0 {
            return Err(GpError::Invalid(format!(
                "inducing points must be a non-empty matrix, got shape {:?}",
                inducing.shape()
            )));
        }
        let kzz = kernel_matrix(&kernel, &inducing, &inducing)?;
        let (var_chol, _) = linalg::cholesky_jittered(&kzz, jitter.schedule())?;
        let state = Self {
            var_mean: vec![mean; inducing.rows()],
            inducing,
            var_chol,
            kernel,
            noise,
            mean,
            jitter,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.inducing.cols()
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let m = self.num_inducing();
        if self.var_mean.len() != m || self.var_chol.shape() != [m, m] {
            return Err(GpError::Invalid(format!(
                "variational parameters do not match {m} inducing points"
            )));
        }
        for i in 0..m {
            if !(self.var_chol.get(i, i) > T::zero()) {
                return Err(GpError::Invalid(format!(
                    "variational factor diagonal {i} is not positive"
                )));
            }
            for j in i + 1..m {
                if self.var_chol.get(i, j) != T::zero() {
                    return Err(GpError::Invalid("variational factor is not lower-triangular".into()));
                }
            }
        }
        if !(self.noise > T::zero()) {
            return Err(GpError::Invalid(format!("noise variance must be positive, got {}", self.noise)));
        }
        let finite = self.inducing.is_finite()
            && self.var_chol.is_finite()
            && self.var_mean.iter().all(|v| v.is_finite())
            && self.noise.is_finite()
            && self.mean.is_finite();
        if !finite {
            return Err(GpError::Invalid("non-finite GP state".into()));
        }
        SeKernel::new(self.kernel.lengthscale, self.kernel.outputscale)?;
        Ok(())
    }

    /// Unconstrained trainable parameters under the `gp.*` names.
    pub fn to_params(&self) -> ParamStore<T> {
        let m = self.num_inducing();
        let mut store = ParamStore::new();
        store.insert(P_INDUCING, self.inducing.clone());
        store.insert(P_VAR_MEAN, Tensor::column(self.var_mean.clone()));
        let raw = Tensor::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.var_chol.get(i, j),
            std::cmp::Ordering::Equal => softplus_inv(self.var_chol.get(i, i)),
            std::cmp::Ordering::Less => T::zero(),
        });
        store.insert(P_VAR_CHOL, raw);
        store.insert(P_LENGTHSCALE, Tensor::scalar(softplus_inv(self.kernel.lengthscale)));
        store.insert(P_OUTPUTSCALE, Tensor::scalar(softplus_inv(self.kernel.outputscale)));
        let excess = (self.noise - T::of(NOISE_FLOOR)).max(T::of(NOISE_FLOOR * 1e-3));
        store.insert(P_NOISE, Tensor::scalar(softplus_inv(excess)));
        store.insert(P_MEAN, Tensor::scalar(self.mean));
        store
    }

    /// Inverse of [`SvgpState::to_params`].
    pub fn from_params(params: &ParamStore<T>) -> Result<Self, GpError> {
        let inducing = params.require(P_INDUCING)?.clone();
        let m = inducing.rows();
        let var_mean = params.require(P_VAR_MEAN)?.data().to_vec();
        let raw = params.require(P_VAR_CHOL)?;
        if raw.shape() != [m, m] {
            return Err(TensorError::shape("var_chol", raw.shape(), &[m, m]).into());
        }
        let var_chol = Tensor::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => raw.get(i, j),
            std::cmp::Ordering::Equal => softplus(raw.get(i, i)),
            std::cmp::Ordering::Less => T::zero(),
        });
        let kernel = SeKernel::new(
            softplus(params.require(P_LENGTHSCALE)?.item()),
            softplus(params.require(P_OUTPUTSCALE)?.item()),
        )?;
        let state = Self {
            inducing,
            var_mean,
            var_chol,
            kernel,
            noise: softplus(params.require(P_NOISE)?.item()) + T::of(NOISE_FLOOR),
            mean: params.require(P_MEAN)?.item(),
            jitter: JitterPolicy::default(),
        };
        state.validate()?;
        Ok(state)
    }

    /// Jitter the factorization of `K_ZZ` needs under the state's policy.
    pub fn inducing_jitter(&self) -> Result<f64, GpError> {
        let kzz = kernel_matrix(&self.kernel, &self.inducing, &self.inducing)?;
        Ok(linalg::cholesky_jittered(&kzz, self.jitter.schedule())?.1)
    }

    /// Predictive distribution at the rows of `h`.
    pub fn predict(&self, h: &Tensor<T>) -> Result<Vec<GaussianPrediction<T>>, GpError> {
        svgp_predict(self, h)
    }
}

/// Constrained GP quantities registered on a tape.
#[derive(Clone, Copy)]
pub struct SvgpVars<'t, T: Scalar> {
    pub inducing: Var<'t, T>,
    /// `[M, 1]`
    pub var_mean: Var<'t, T>,
    pub var_chol: Var<'t, T>,
    pub lengthscale: Var<'t, T>,
    pub outputscale: Var<'t, T>,
    pub noise: Var<'t, T>,
    pub mean: Var<'t, T>,
    pub jitter: JitterPolicy,
}

impl<'t, T: Scalar> SvgpVars<'t, T> {
    /// Maps the raw `gp.*` parameters bound on a tape to constrained values.
    pub fn from_bound(bound: &BoundParams<'t, T>) -> Result<Self, TensorError> {
        let inducing = bound.get(P_INDUCING)?;
        let tape = inducing.tape();
        let raw = bound.get(P_VAR_CHOL)?;
        let shape = raw.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(TensorError::shape("var_chol", &shape, &shape));
        }
        let m = shape[0];
        let mask = Tensor::from_fn(m, m, |i, j| if i > j { T::one() } else { T::zero() });
        let var_chol = raw
            .mul(tape.constant(mask))?
            .add(raw.diag()?.softplus()?.diag_embed()?)?;
        Ok(Self {
            inducing,
            var_mean: bound.get(P_VAR_MEAN)?,
            var_chol,
            lengthscale: bound.get(P_LENGTHSCALE)?.softplus()?,
            outputscale: bound.get(P_OUTPUTSCALE)?.softplus()?,
            noise: bound.get(P_NOISE)?.softplus()?.add_scalar(T::of(NOISE_FLOOR))?,
            mean: bound.get(P_MEAN)?,
            jitter: JitterPolicy::default(),
        })
    }

    /// Registers a fixed state as constants.
    pub fn constant(tape: &'t Tape<T>, state: &SvgpState<T>) -> Self {
        Self {
            inducing: tape.constant(state.inducing.clone()),
            var_mean: tape.constant(Tensor::column(state.var_mean.clone())),
            var_chol: tape.constant(state.var_chol.clone()),
            lengthscale: tape.scalar(state.kernel.lengthscale),
            outputscale: tape.scalar(state.kernel.outputscale),
            noise: tape.scalar(state.noise),
            mean: tape.scalar(state.mean),
            jitter: state.jitter,
        }
    }
}

/// Cholesky factor of `k + εI` on the tape, with ε the first value of the
/// jitter schedule for which the factorization succeeds.
pub fn jittered_cholesky<'t, T: Scalar>(k: Var<'t, T>, policy: JitterPolicy) -> Result<(Var<'t, T>, f64), TensorError> {
    let value = k.value();
    let sym = value.zip_map(&value.transpose(), |a, b| (a + b) * T::of(0.5));
    let (_, eps) = linalg::cholesky_jittered(&sym, policy.schedule())?;
    let n = value.rows();
    let shifted = k.add(k.tape().constant(Tensor::eye(n).map(|v| v * T::of(eps))))?;
    Ok((shifted.cholesky()?, eps))
}

struct Conditional<'t, T: Scalar> {
    lz: Var<'t, T>,
    /// `Lz⁻¹ (m_v − μ₀)`
    a_m: Var<'t, T>,
    mean: Var<'t, T>,
    latent_var: Var<'t, T>,
}

fn conditional<'t, T: Scalar>(vars: &SvgpVars<'t, T>, h: Var<'t, T>) -> Result<Conditional<'t, T>, TensorError> {
    let kzz = kernel_on_tape(vars.lengthscale, vars.outputscale, vars.inducing, vars.inducing)?;
    let (lz, _) = jittered_cholesky(kzz, vars.jitter)?;
    let kzx = kernel_on_tape(vars.lengthscale, vars.outputscale, vars.inducing, h)?;
    let a = lz.tri_solve(kzx, Triangle::Lower, false)?;
    let a_m = lz.tri_solve(vars.var_mean.sub(vars.mean)?, Triangle::Lower, false)?;
    let mean = a.t()?.matmul(a_m)?.add(vars.mean)?;
    let b = lz.tri_solve(a, Triangle::Lower, true)?;
    let explained = a.square()?.sum_axis(0)?;
    let retained = vars.var_chol.t()?.matmul(b)?.square()?.sum_axis(0)?;
    let latent_var = retained.sub(explained)?.add(vars.outputscale)?.t()?;
    Ok(Conditional {
        lz,
        a_m,
        mean,
        latent_var,
    })
}

/// Marginal `q(f)` at the rows of `h` as `([b, 1] mean, [b, 1] latent variance)`.
pub fn predict_on_tape<'t, T: Scalar>(vars: &SvgpVars<'t, T>, h: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>), TensorError> {
    let c = conditional(vars, h)?;
    Ok((c.mean, c.latent_var))
}

/// The bound and its two parts, all scalars on the tape.
#[derive(Clone, Copy)]
pub struct ElboTerms<'t, T: Scalar> {
    pub elbo: Var<'t, T>,
    /// Minibatch sum of expected log-likelihoods (unscaled).
    pub expected_loglik: Var<'t, T>,
    pub kl: Var<'t, T>,
}

/// `(N/b) Σᵢ E_q[log p(yᵢ | fᵢ)] − KL(q(f_Z) ‖ p(f_Z))` for a minibatch of
/// `b` latents `h` with targets `y` out of `n_total` samples.
pub fn elbo<'t, T: Scalar>(
    vars: &SvgpVars<'t, T>,
    h: Var<'t, T>,
    y: &[T],
    n_total: usize,
) -> Result<ElboTerms<'t, T>, GpError> {
    let b = y.len();
    let hs = h.shape();
    if b == 0 || hs.len() != 2 || hs[0] != b {
        return Err(GpError::Invalid(format!("{b} targets for latents of shape {hs:?}")));
    }
    if n_total < b {
        return Err(GpError::Invalid(format!("dataset size {n_total} below batch size {b}")));
    }
    let tape = h.tape();
    let c = conditional(vars, h)?;

    let half = T::of(0.5);
    let resid = tape.constant(Tensor::column(y.to_vec())).sub(c.mean)?;
    let misfit = resid.square()?.add(c.latent_var)?.div(vars.noise.scale(T::of(2.0))?)?;
    let log_norm = vars.noise.ln()?.scale(-half)?.add_scalar(-half * (T::of(2.0) * T::PI()).ln())?;
    let expected_loglik = log_norm.scale(T::of(b as f64))?.sub(misfit.sum()?)?;

    let m = vars.var_chol.shape()[0];
    let w = c.lz.tri_solve(vars.var_chol, Triangle::Lower, false)?;
    let kl = w
        .square()?
        .sum()?
        .add(c.a_m.square()?.sum()?)?
        .add(c.lz.logdet_from_cholesky()?)?
        .sub(vars.var_chol.logdet_from_cholesky()?)?
        .add_scalar(-T::of(m as f64))?
        .scale(half)?;

    let elbo = expected_loglik.scale(T::of(n_total as f64 / b as f64))?.sub(kl)?;
    Ok(ElboTerms {
        elbo,
        expected_loglik,
        kl,
    })
}

/// Predictive distribution of the sparse model at the rows of `h`:
/// `μ* = μ₀ + K*Z K_ZZ⁻¹ (m_v − μ₀)` and
/// `v* = k** − K*Z K_ZZ⁻¹ (K_ZZ − S) K_ZZ⁻¹ KZ*`.
pub fn svgp_predict<T: Scalar>(state: &SvgpState<T>, h: &Tensor<T>) -> Result<Vec<GaussianPrediction<T>>, GpError> {
    state.validate()?;
    if h.rank() != 2 || h.cols() != state.latent_dim() {
        return Err(TensorError::shape("svgp_predict", h.shape(), state.inducing.shape()).into());
    }
    if !h.is_finite() {
        return Err(GpError::Invalid("non-finite prediction input".into()));
    }
    let kzz = kernel_matrix(&state.kernel, &state.inducing, &state.inducing)?;
    let (lz, _) = linalg::cholesky_jittered(&kzz, state.jitter.schedule())?;
    let centered = Tensor::column(state.var_mean.iter().map(|&v| v - state.mean).collect());
    let a_m = linalg::solve_triangular(&lz, &centered, Triangle::Lower, false)?;
    let lv_t = state.var_chol.transpose();
    let m = state.num_inducing();
    let cols = h.cols();
    let s2 = state.kernel.outputscale;

    let chunks: Vec<Result<Vec<GaussianPrediction<T>>, GpError>> = h
        .data()
        .par_chunks(PREDICT_CHUNK * cols.max(1))
        .map(|rows| {
            let q = rows.len() / cols;
            let hq = Tensor::matrix(q, cols, rows.to_vec())?;
            let kzx = kernel_matrix(&state.kernel, &state.inducing, &hq)?;
            let a = linalg::solve_triangular(&lz, &kzx, Triangle::Lower, false)?;
            let b = linalg::solve_triangular(&lz, &a, Triangle::Lower, true)?;
            let lb = lv_t.matmul(&b)?;
            Ok((0..q)
                .map(|j| {
                    let mut mu = state.mean;
                    let mut explained = T::zero();
                    let mut retained = T::zero();
                    for i in 0..m {
                        let aij = a.get(i, j);
                        mu = mu + aij * a_m.get(i, 0);
                        explained = explained + aij * aij;
                        retained = retained + lb.get(i, j) * lb.get(i, j);
                    }
                    GaussianPrediction {
                        mean: mu,
                        latent_var: (s2 - explained + retained).max(T::of(MIN_VARIANCE)),
                        noise_var: state.noise,
                    }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(h.rows());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, m: usize, dim: usize) -> SvgpState<f64> {
        let z = Tensor::from_fn(m, dim, |_, _| rng.random_range(-1.5..1.5));
        let kernel = SeKernel::new(rng.random_range(0.6..1.4), rng.random_range(0.5..1.5)).unwrap();
        let mut s = SvgpState::at_prior(z, kernel, rng.random_range(0.05..0.5), rng.random_range(-0.5..0.5)).unwrap();
        for v in &mut s.var_mean {
            *v += rng.random_range(-0.5..0.5);
        }
        for i in 0..m {
            for j in 0..i {
                s.var_chol.set(i, j, rng.random_range(-0.3..0.3));
            }
            s.var_chol.set(i, i, rng.random_range(0.2..0.9));
        }
        s
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let z = Tensor::from_fn(4, 2, |i, j| i as f64 * 0.7 - j as f64 * 0.4);
        let s = SvgpState::at_prior(z, SeKernel::new(1.1, 0.8).unwrap(), 0.2, 0.3).unwrap();
        let tape = Tape::new();
        let vars = SvgpVars::constant(&tape, &s);
        let h = tape.constant(Tensor::from_fn(3, 2, |i, j| (i + j) as f64 * 0.3));
        let t = elbo(&vars, h, &[0.1, 0.2, 0.3], 3).unwrap();
        assert!(t.kl.item().abs() < 1e-10);
    }

    #[test]
    fn kl_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let s = random_state(&mut rng, 4, 2);
            let tape = Tape::new();
            let vars = SvgpVars::constant(&tape, &s);
            let h = tape.constant(Tensor::zeros(&[1, 2]));
            let t = elbo(&vars, h, &[0.0], 1).unwrap();
            assert!(t.kl.item() >= -1e-12);
        }
    }

    #[test]
    fn scalar_elbo_matches_hand_formula() {
        let (z, x, y) = (0.3, -0.4, 0.7);
        let (ell, s2, noise, mu0) = (0.9, 1.3, 0.25, 0.1);
        let (mv, lv) = (0.5, 0.6);
        let state = SvgpState {
            inducing: Tensor::matrix(1, 1, vec![z]).unwrap(),
            var_mean: vec![mv],
            var_chol: Tensor::matrix(1, 1, vec![lv]).unwrap(),
            kernel: SeKernel::new(ell, s2).unwrap(),
            noise,
            mean: mu0,
            jitter: JitterPolicy::default(),
        };
        let tape = Tape::new();
        let vars = SvgpVars::constant(&tape, &state);
        let n_total = 5;
        let t = elbo(&vars, tape.constant(Tensor::matrix(1, 1, vec![x]).unwrap()), &[y], n_total).unwrap();

        let kzz: f64 = s2 + 1e-6;
        let kzx = s2 * (-(z - x) * (z - x) / (2.0 * ell * ell)).exp();
        let mean = mu0 + kzx / kzz * (mv - mu0);
        let var = s2 - kzx * kzx / kzz + kzx * kzx * lv * lv / (kzz * kzz);
        let ell_term = -0.5 * (2.0 * std::f64::consts::PI * noise).ln() - ((y - mean).powi(2) + var) / (2.0 * noise);
        let kl = 0.5 * (lv * lv / kzz + (mv - mu0).powi(2) / kzz - 1.0 + (kzz / (lv * lv)).ln());
        let expected = n_total as f64 * ell_term - kl;
        assert!((t.elbo.item() - expected).abs() < 1e-10, "{} vs {}", t.elbo.item(), expected);
        assert!((t.kl.item() - kl).abs() < 1e-12);
    }

    #[test]
    fn tape_and_plain_predictions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng, 5, 3);
        let h = Tensor::from_fn(7, 3, |_, _| rng.random_range(-2.0..2.0));
        let plain = svgp_predict(&s, &h).unwrap();
        let tape = Tape::new();
        let vars = SvgpVars::constant(&tape, &s);
        let (mean, var) = predict_on_tape(&vars, tape.constant(h)).unwrap();
        for (i, p) in plain.iter().enumerate() {
            assert!((p.mean - mean.value().data()[i]).abs() < 1e-12);
            assert!((p.latent_var - var.value().data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_state(&mut rng, 4, 2);
        let far = Tensor::matrix(1, 2, vec![1e3, -1e3]).unwrap();
        let p = svgp_predict(&s, &far).unwrap()[0];
        assert!((p.mean - s.mean).abs() < 1e-12);
        assert!((p.latent_var - s.kernel.outputscale).abs() < 1e-12);
    }

    #[test]
    fn variance_positive_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = random_state(&mut rng, 6, 2);
        let h = Tensor::from_fn(1000, 2, |_, _| rng.random_range(-3.0..3.0));
        let preds = svgp_predict(&s, &h).unwrap();
        assert_eq!(preds.len(), 1000);
        assert!(preds.iter().all(|p| p.latent_var > 0.0 && p.obs_var() > 0.0));
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_state(&mut rng, 3, 2);
        let back = SvgpState::from_params(&s.to_params()).unwrap();
        assert_eq!(back.inducing, s.inducing);
        assert_eq!(back.var_mean, s.var_mean);
        for (a, b) in back.var_chol.data().iter().zip(s.var_chol.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((back.kernel.lengthscale - s.kernel.lengthscale).abs() < 1e-12);
        assert!((back.noise - s.noise).abs() < 1e-12);

        let tape = Tape::new();
        let bound = s.to_params().bind(&tape, true);
        let vars = SvgpVars::from_bound(&bound).unwrap();
        for (a, b) in vars.var_chol.value().data().iter().zip(s.var_chol.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_batches() {
        let s = SvgpState::at_prior(Tensor::zeros(&[2, 1]), SeKernel::new(1.0, 1.0).unwrap(), 0.1, 0.0);
        assert!(s.is_ok());
        let s = s.unwrap();
        let tape = Tape::new();
        let vars = SvgpVars::constant(&tape, &s);
        let h = tape.constant(Tensor::zeros(&[2, 1]));
        assert!(elbo(&vars, h, &[0.0], 2).is_err());
        assert!(elbo(&vars, h, &[0.0, 1.0], 1).is_err());
    }
}
