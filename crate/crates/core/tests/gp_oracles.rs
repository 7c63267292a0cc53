//! Sparse and exact GP checked against independent dense linear algebra.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajgp::autodiff::{Adam, AdamConfig, Gradients, ParamStore, Tape, Tensor};
use trajgp::gp::{elbo, kernel_matrix, svgp_predict, ExactGp, SeKernel, SvgpState, SvgpVars};
use trajgp::linalg::JitterPolicy;

struct Instance {
    x: Tensor<f64>,
    y: Vec<f64>,
    kernel: SeKernel<f64>,
    noise: f64,
    mean: f64,
}

fn instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Instance {
    let x = Tensor::from_fn(n, dim, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Instance {
        x,
        y,
        kernel: SeKernel::new(rng.random_range(0.6..1.5), rng.random_range(0.5..2.0)).unwrap(),
        noise: rng.random_range(0.05..0.5),
        mean: rng.random_range(-0.3..0.3),
    }
}

fn dense(t: &Tensor<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn se(a: &[f64], b: &[f64], k: &SeKernel<f64>) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    k.outputscale * (-d / (2.0 * k.lengthscale.powi(2))).exp()
}

fn gram(a: &Tensor<f64>, b: &Tensor<f64>, k: &SeKernel<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), b.rows(), |i, j| se(a.row(i), b.row(j), k))
}

/// Variational optimum for inducing points at the training inputs, using
/// the same jittered prior covariance the model factorizes. Computed in the
/// eigenbasis of `K` so the near-singular directions stay accurate.
fn optimal_state(inst: &Instance, jitter: JitterPolicy) -> SvgpState<f64> {
    let n = inst.y.len();
    let mut state = SvgpState {
        inducing: inst.x.clone(),
        var_mean: vec![inst.mean; n],
        var_chol: Tensor::eye(n),
        kernel: inst.kernel,
        noise: inst.noise,
        mean: inst.mean,
        jitter,
    };
    let eps = state.inducing_jitter().unwrap();
    let eig = gram(&inst.x, &inst.x, &inst.kernel).symmetric_eigen();
    let u = &eig.eigenvectors;
    let r = DVector::from_iterator(n, inst.y.iter().map(|v| v - inst.mean));
    let ur = u.transpose() * r;
    let mut mean_coef = DVector::zeros(n);
    let mut cov_diag = DVector::zeros(n);
    for i in 0..n {
        let lam = eig.eigenvalues[i];
        let lt = lam + eps;
        let denom = lt + lam * lam / inst.noise;
        mean_coef[i] = lt * lam / (inst.noise * denom) * ur[i];
        cov_diag[i] = lt * lt / denom;
    }
    let m = u * mean_coef;
    let mut s = u * DMatrix::from_diagonal(&cov_diag) * u.transpose();
    s = (&s + s.transpose()) * 0.5;
    let l = s.cholesky().unwrap().l();
    state.var_mean = m.iter().map(|v| v + inst.mean).collect();
    state.var_chol = Tensor::from_fn(n, n, |i, j| l[(i, j)]);
    state
}

fn elbo_value(state: &SvgpState<f64>, x: &Tensor<f64>, y: &[f64]) -> f64 {
    let tape = Tape::new();
    let vars = SvgpVars::constant(&tape, state);
    elbo(&vars, tape.constant(x.clone()), y, y.len()).unwrap().elbo.item()
}

#[test]
fn lml_matches_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..20 {
        let inst = instance(&mut rng, 5, 2);
        let gp = ExactGp::new(inst.x.clone(), inst.y.clone(), inst.kernel, inst.noise, inst.mean).unwrap();
        let lambda = gram(&inst.x, &inst.x, &inst.kernel) + DMatrix::identity(5, 5) * inst.noise;
        let eig = lambda.symmetric_eigen();
        let r = DVector::from_iterator(5, inst.y.iter().map(|v| v - inst.mean));
        let proj = eig.eigenvectors.transpose() * r;
        let quad: f64 = proj.iter().zip(eig.eigenvalues.iter()).map(|(p, d)| p * p / d).sum();
        let logdet: f64 = eig.eigenvalues.iter().map(|d| d.ln()).sum();
        let oracle = -0.5 * quad - 0.5 * logdet - 2.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((gp.log_marginal_likelihood().unwrap() - oracle).abs() < 1e-8);
    }
}

#[test]
fn exact_posterior_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..10 {
        let n = rng.random_range(3..=15);
        let inst = instance(&mut rng, n, 2);
        let xs = Tensor::from_fn(6, 2, |_, _| rng.random_range(-2.5..2.5));
        let gp = ExactGp::new(inst.x.clone(), inst.y.clone(), inst.kernel, inst.noise, inst.mean).unwrap();
        let inv = (gram(&inst.x, &inst.x, &inst.kernel) + DMatrix::identity(n, n) * inst.noise)
            .try_inverse()
            .unwrap();
        let ksx = gram(&xs, &inst.x, &inst.kernel);
        let r = DVector::from_iterator(n, inst.y.iter().map(|v| v - inst.mean));
        let mean = &ksx * &inv * r;
        let cov = gram(&xs, &xs, &inst.kernel) - &ksx * &inv * ksx.transpose();
        for (i, p) in gp.posterior(&xs).unwrap().iter().enumerate() {
            assert!((p.mean - inst.mean - mean[i]).abs() < 1e-9);
            assert!((p.latent_var - cov[(i, i)].max(1e-12)).abs() < 1e-9);
        }
    }
}

#[test]
fn kernel_matrices_are_symmetric_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..20 {
        let n = rng.random_range(2..=25);
        let inst = instance(&mut rng, n, 3);
        let k = kernel_matrix(&inst.kernel, &inst.x, &inst.x).unwrap();
        let d = dense(&k);
        assert!((&d - d.transpose()).amax() < 1e-12);
        assert!(d.symmetric_eigen().eigenvalues.min() >= -1e-8);
        for i in 0..n {
            assert_eq!(k.get(i, i), inst.kernel.outputscale);
        }
    }
}

/// Factorization jitter for the equivalence check: a smaller starting value
/// with the default escalation.
fn fine_jitter() -> JitterPolicy {
    JitterPolicy {
        initial: 1e-10,
        ..JitterPolicy::default()
    }
}

#[test]
fn sparse_at_optimum_reproduces_exact_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..20 {
        let n = rng.random_range(5..=30);
        let dim = rng.random_range(1..=3);
        let inst = instance(&mut rng, n, dim);
        let gp = ExactGp::new(inst.x.clone(), inst.y.clone(), inst.kernel, inst.noise, inst.mean).unwrap();
        let xs = Tensor::from_fn(40, dim, |_, _| rng.random_range(-2.5..2.5));
        let exact = gp.posterior(&xs).unwrap();
        let state = optimal_state(&inst, fine_jitter());
        let sparse = svgp_predict(&state, &xs).unwrap();
        for (e, s) in exact.iter().zip(&sparse) {
            assert!((e.mean - s.mean).abs() < 1e-6, "mean {} vs {}", e.mean, s.mean);
            assert!((e.latent_var - s.latent_var).abs() < 1e-6, "var {} vs {}", e.latent_var, s.latent_var);
        }
        let lml = gp.log_marginal_likelihood().unwrap();
        for state in [state, optimal_state(&inst, JitterPolicy::default())] {
            let bound = elbo_value(&state, &inst.x, &inst.y);
            assert!(bound <= lml + 1e-6, "elbo {bound} above lml {lml}");
            assert!(bound >= lml - 1e-2, "elbo {bound} far below lml {lml}");
        }
    }
}

#[test]
fn elbo_stays_below_lml_while_optimizing() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..5 {
        let n = rng.random_range(5..=15);
        let inst = instance(&mut rng, n, 2);
        let gp = ExactGp::new(inst.x.clone(), inst.y.clone(), inst.kernel, inst.noise, inst.mean).unwrap();
        let lml = gp.log_marginal_likelihood().unwrap();
        let start = SvgpState::at_prior(inst.x.clone(), inst.kernel, inst.noise, inst.mean).unwrap();
        let mut params = start.to_params();
        let frozen = ["gp.lengthscale_raw", "gp.outputscale_raw", "gp.noise_raw", "gp.mean"];
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.02,
            ..AdamConfig::default()
        });
        let mut first = None;
        let mut last = f64::NEG_INFINITY;
        for _ in 0..1500 {
            let tape = Tape::new();
            let vars = SvgpVars::from_bound(&params.bind(&tape, true)).unwrap();
            let out = elbo(&vars, tape.constant(inst.x.clone()), &inst.y, n).unwrap();
            last = out.elbo.item();
            first.get_or_insert(last);
            assert!(last <= lml + 1e-6, "elbo {last} above lml {lml}");
            let grads = tape.backward(out.elbo.scale(-1.0).unwrap()).unwrap();
            let kept = grads.into_map().into_iter().filter(|(k, _)| !frozen.contains(&k.as_str())).collect();
            adam.step(&mut params, &Gradients::from_map(kept)).unwrap();
        }
        assert!(last > first.unwrap());
        assert!(lml - last < 0.5, "gap {} after optimization", lml - last);
    }
}

#[test]
fn elbo_gradients_match_finite_differences() {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for trial in 0..8 {
        let m = rng.random_range(1..=4);
        let b = rng.random_range(1..=6);
        let dim = rng.random_range(1..=3);
        let inst = instance(&mut rng, b, dim);
        let z = Tensor::from_fn(m, dim, |_, _| rng.random_range(-1.5..1.5));
        let mut state = SvgpState::at_prior(z, inst.kernel, inst.noise, inst.mean).unwrap();
        for v in &mut state.var_mean {
            *v += rng.random_range(-0.5..0.5);
        }
        for i in 0..m {
            for j in 0..i {
                state.var_chol.set(i, j, rng.random_range(-0.3..0.3));
            }
            state.var_chol.set(i, i, rng.random_range(0.3..1.0));
        }
        let params = state.to_params();
        let x = inst.x.clone();
        let n_total = b + 3;
        let loss = |p: &ParamStore<f64>| {
            let tape = Tape::new();
            let vars = SvgpVars::from_bound(&p.bind(&tape, false)).unwrap();
            elbo(&vars, tape.constant(x.clone()), &inst.y, n_total).unwrap().elbo.item()
        };
        let tape = Tape::new();
        let vars = SvgpVars::from_bound(&params.bind(&tape, true)).unwrap();
        let out = elbo(&vars, tape.constant(x.clone()), &inst.y, n_total).unwrap();
        let grads = tape.backward(out.elbo).unwrap();
        for name in params.names().map(str::to_string).collect::<Vec<_>>() {
            let analytic = grads.get(&name).unwrap_or_else(|| panic!("no gradient for {name}"));
            for idx in 0..params.get(&name).unwrap().len() {
                let mut plus = params.clone();
                plus.get_mut(&name).unwrap().data_mut()[idx] += H;
                let mut minus = params.clone();
                minus.get_mut(&name).unwrap().data_mut()[idx] -= H;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
                let a = analytic.data()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                assert!(rel < 1e-4, "trial {trial} {name}[{idx}]: {a} vs {numeric}");
            }
        }
    }
}
