use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::{ParamStore, Tensor};
use crate::extractors::{Arch, ExtractorConfig};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub(crate) fn uniform<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Tensor<T> {
    Tensor::from_fn(rows, cols, |_, _| T::of(rng.random_range(-bound..=bound)))
}

/// `n × n` orthogonal matrix from Gram–Schmidt on a Gaussian draw.
pub(crate) fn orthogonal<T: Scalar>(rng: &mut Rng, n: usize) -> Tensor<T> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    Tensor::from_fn(n, n, |i, j| T::of(cols[j][i]))
}

fn linear<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{name}.weight"), uniform(rng, fan_in, fan_out, bound));
    store.insert(format!("{name}.bias"), uniform(rng, 1, fan_out, bound));
}

pub(crate) fn init_params<T: Scalar>(config: &ExtractorConfig, rng: &mut Rng) -> ParamStore<T> {
    let mut store = ParamStore::new();
    let h = config.hidden_dim;
    match config.arch {
        Arch::Transformer => {
            linear(&mut store, rng, "fe.input", config.input_dim, h);
            for l in 0..config.num_layers {
                let p = format!("fe.tf{l}");
                for proj in ["q", "k", "v", "o"] {
                    linear(&mut store, rng, &format!("{p}.{proj}"), h, h);
                }
                linear(&mut store, rng, &format!("{p}.ff1"), h, config.feedforward_dim);
                linear(&mut store, rng, &format!("{p}.ff2"), config.feedforward_dim, h);
                for ln in ["ln1", "ln2"] {
                    store.insert(format!("{p}.{ln}.gamma"), Tensor::ones(&[1, h]));
                    store.insert(format!("{p}.{ln}.beta"), Tensor::zeros(&[1, h]));
                }
            }
        }
        arch => {
            let g = arch.gates();
            let bias_bound = 1.0 / (h as f64).sqrt();
            for l in 0..config.num_layers {
                let p = format!("fe.rnn{l}");
                let fan_in = if l == 0 { config.input_dim } else { h };
                store.insert(format!("{p}.w_ih"), uniform(rng, fan_in, g * h, 1.0 / (fan_in as f64).sqrt()));
                let blocks: Vec<Tensor<T>> = (0..g).map(|_| orthogonal(rng, h)).collect();
                let w_hh = Tensor::from_fn(h, g * h, |i, j| blocks[j / h].get(i, j % h));
                store.insert(format!("{p}.w_hh"), w_hh);
                store.insert(format!("{p}.b_ih"), uniform(rng, 1, g * h, bias_bound));
                store.insert(format!("{p}.b_hh"), uniform(rng, 1, g * h, bias_bound));
            }
        }
    }
    linear(&mut store, rng, "fe.dec1", config.encoder_dim(), config.decoder_dim);
    linear(&mut store, rng, "fe.dec2", config.decoder_dim, config.latent_dim);
    store
}
