use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm clip, disabled when `None`.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clip_norm: None,
        }
    }
}

/// Running first and second moments per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState {
                step: 0,
                moments: BTreeMap::new(),
            },
        }
    }

    /// One descent step on `params` (minimizing the loss whose gradients
    /// are given). A non-finite gradient rejects the whole step.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<(), TensorError> {
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient { name: name.clone() });
            }
            if params.get(name).is_none() {
                return Err(TensorError::MissingParam { name: name.clone() });
            }
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|(_, g)| g.data().iter())
                    .map(|v| v.as_f64() * v.as_f64())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.eps);
        let scale = T::of(scale);
        for (name, g) in grads.iter() {
            let p: &mut Tensor<T> = params.get_mut(name).expect("checked above");
            let (m, v) = self
                .state
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = gv * scale;
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bias1;
                let vhat = *vv / bias2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn quadratic_grads(store: &ParamStore<f64>) -> Gradients<f64> {
        let tape = Tape::new();
        let x = tape.param("x", store.get("x").unwrap().clone());
        let loss = x.mul(x).unwrap().sum().unwrap().scale(0.5).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(vec![0.0, 0.0]));
        let before = store.clone();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() });
        let g = quadratic_grads(&store);
        opt.step(&mut store, &g).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(vec![1.5, -2.0]));
        let before = store.clone();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.0, ..Default::default() });
        for _ in 0..5 {
            let g = quadratic_grads(&store);
            opt.step(&mut store, &g).unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(3.0));
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() });
        let mut trace = Vec::new();
        for _ in 0..400 {
            let g = quadratic_grads(&store);
            opt.step(&mut store, &g).unwrap();
            trace.push(store.get("x").unwrap().item().abs());
        }
        // monotone decrease after a short warm-up
        for w in trace[10..40].windows(2) {
            assert!(w[1] <= w[0], "{w:?}");
        }
        assert!(*trace.last().unwrap() < 0.05);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let tape = Tape::new();
        let w = tape.param("w", Tensor::scalar(1.0));
        let _ = w;
        let mut grads = tape.backward(w.scale(1.0).unwrap()).unwrap();
        // forge a NaN gradient
        let mut bad = grads.clone().into_map();
        bad.insert("w".into(), Tensor::scalar(f64::NAN));
        grads = Gradients::from_map(bad);
        let mut opt = Adam::new(AdamConfig::default());
        match opt.step(&mut store, &grads) {
            Err(TensorError::NonFiniteGradient { name }) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn deterministic_given_inputs() {
        let run = || {
            let mut store = ParamStore::new();
            store.insert("x", Tensor::vector(vec![0.7, -1.3]));
            let mut opt = Adam::new(AdamConfig { learning_rate: 0.01, ..Default::default() });
            for _ in 0..20 {
                let g = quadratic_grads(&store);
                opt.step(&mut store, &g).unwrap();
            }
            store
        };
        assert_eq!(run(), run());
    }
}
