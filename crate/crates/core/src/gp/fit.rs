use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::gp::{elbo, GpError, SeKernel, SvgpState, SvgpVars};
use crate::rng;
use crate::scalar::Scalar;

/// Settings for fitting a sparse GP directly on input features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvgpFitConfig {
    pub num_inducing: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvgpFitConfig {
    fn default() -> Self {
        Self {
            num_inducing: 64,
            epochs: 50,
            batch_size: 256,
            learning_rate: 0.01,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvgpFitReport {
    /// Full-data ELBO before the first step and after every epoch.
    pub elbo_trace: Vec<f64>,
}

/// Fits a sparse GP with all parameters trainable by minibatch ascent on the
/// ELBO. Inducing points start at a random subset of the inputs; the
/// variational distribution starts at the prior.
pub fn fit_svgp<T: Scalar>(
    x: &Tensor<T>,
    y: &[T],
    config: &SvgpFitConfig,
) -> Result<(SvgpState<T>, SvgpFitReport), GpError> {
    let n = y.len();
    if x.rank() != 2 || x.rows() != n || n == 0 {
        return Err(GpError::Invalid(format!("{} inputs for {n} targets", x.shape()[0])));
    }
    if config.num_inducing == 0 || config.batch_size == 0 {
        return Err(GpError::Invalid("num_inducing and batch_size must be positive".into()));
    }
    let dim = x.cols();
    let m = config.num_inducing.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(config.seed, "gp.fit.inducing"));
    let z = Tensor::from_fn(m, dim, |i, j| x.get(order[i], j));

    let mean = y.iter().copied().sum::<T>() / T::of(n as f64);
    let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of(n as f64);
    let kernel = SeKernel::new(T::of((dim as f64).sqrt()), T::one())?;
    let noise = (T::of(0.1) * var).max(T::of(1e-4));
    let mut params = SvgpState::at_prior(z, kernel, noise, mean)?.to_params();

    let full_elbo = |params: &crate::autodiff::ParamStore<T>| -> Result<f64, GpError> {
        let tape = Tape::new();
        let bound = params.bind(&tape, false);
        let vars = SvgpVars::from_bound(&bound)?;
        Ok(elbo(&vars, tape.constant(x.clone()), y, n)?.elbo.item().as_f64())
    };

    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut trace = vec![full_elbo(&params)?];
    let b = config.batch_size.min(n);
    for epoch in 0..config.epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::indexed_stream(config.seed, "gp.fit.batches", epoch as u64));
        for chunk in perm.chunks(b) {
            let xb = Tensor::from_fn(chunk.len(), dim, |i, j| x.get(chunk[i], j));
            let yb: Vec<T> = chunk.iter().map(|&i| y[i]).collect();
            let tape = Tape::new();
            let bound = params.bind(&tape, true);
            let vars = SvgpVars::from_bound(&bound)?;
            let terms = elbo(&vars, tape.constant(xb), &yb, n)?;
            let loss = terms.elbo.scale(-T::one() / T::of(n as f64))?;
            let grads = tape.backward(loss)?;
            adam.step(&mut params, &grads)?;
        }
        trace.push(full_elbo(&params)?);
        log::debug!("svgp fit epoch {epoch}: elbo {}", trace.last().copied().unwrap_or(f64::NAN));
    }
    let state = SvgpState::from_params(&params)?;
    Ok((state, SvgpFitReport { elbo_trace: trace }))
}
