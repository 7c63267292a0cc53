use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Gradients, Tape, Tensor, TensorError};
use crate::cluster::{kmeans, KmeansConfig};
use crate::data::{prefix_samples, sample_tensor, PatientSequence, PrefixSample, DEFAULT_MAX_PREFIX};
use crate::extractors::{
    encode_on_tape, init_params, mle_head_on_tape, mle_params, Arch, ArchDefaults, Dropout, ExtractorConfig, MLE_BIAS,
};
use crate::gp::{elbo, SeKernel, SvgpState, SvgpVars};
use crate::model::{DklModel, Head, ModelError};
use crate::rng;

/// Training epochs when the configuration does not say otherwise.
pub const DEFAULT_EPOCHS: usize = 20;
/// Samples encoded to place the initial inducing points.
pub const DEFAULT_WARMUP_SAMPLES: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub extractor: ExtractorConfig,
    pub head: Head,
    pub num_inducing: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub max_prefix: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    pub warmup_samples: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Grid optimum for `arch` on inputs of width `input_dim`.
    pub fn defaults(arch: Arch, input_dim: usize, head: Head) -> Self {
        let d = ArchDefaults::of(arch);
        Self {
            extractor: ExtractorConfig::defaults(arch, input_dim),
            head,
            num_inducing: d.num_inducing,
            batch_size: d.batch_size,
            epochs: DEFAULT_EPOCHS,
            learning_rate: d.learning_rate,
            max_prefix: DEFAULT_MAX_PREFIX,
            clip_norm: None,
            warmup_samples: DEFAULT_WARMUP_SAMPLES,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.extractor.validate()?;
        for (name, v) in [
            ("num_inducing", self.num_inducing),
            ("batch_size", self.batch_size),
            ("max_prefix", self.max_prefix),
            ("warmup_samples", self.warmup_samples),
        ] {
            if v == 0 {
                return Err(ModelError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::Invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(ModelError::Invalid(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// One line of the training log. Epoch 0 describes the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    /// Full-training-set ELBO in evaluation mode (GP head only).
    pub elbo: Option<f64>,
    /// Mean minibatch loss over the epoch.
    pub train_loss: Option<f64>,
    pub val_mse: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MSE.
    pub model: DklModel,
    pub log: Vec<LogEntry>,
    pub best_epoch: usize,
}

struct Snapshot {
    elbo: Option<f64>,
    train_mse: f64,
    val_mse: Option<f64>,
}

fn targets(samples: &[PrefixSample]) -> Vec<f64> {
    samples.iter().map(|s| s.target).collect()
}

fn mse(preds: impl Iterator<Item = f64>, y: &[f64]) -> f64 {
    preds.zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

fn snapshot(
    model: &DklModel,
    train: &[PatientSequence],
    train_samples: &[PrefixSample],
    val: &[PatientSequence],
    val_samples: &[PrefixSample],
) -> Result<Snapshot, ModelError> {
    let y = targets(train_samples);
    let h = model.latents(train, train_samples)?;
    let preds = model.predict_latents(&h)?;
    let train_mse = mse(preds.iter().map(|p| p.mean), &y);
    let elbo = match model.head {
        Head::Gp => {
            let tape = Tape::new();
            let bound = model.params.bind(&tape, false);
            let vars = SvgpVars::from_bound(&bound)?;
            Some(elbo(&vars, tape.constant(h), &y, y.len())?.elbo.item())
        }
        Head::Mle => None,
    };
    let val_mse = if val_samples.is_empty() {
        None
    } else {
        let preds = model.predict(val, val_samples)?;
        Some(mse(preds.iter().map(|p| p.mean), &targets(val_samples)))
    };
    Ok(Snapshot {
        elbo,
        train_mse,
        val_mse,
    })
}

/// Lower is better: validation MSE when there is a validation set, else the
/// training objective.
fn score(s: &Snapshot) -> f64 {
    match (s.val_mse, s.elbo) {
        (Some(v), _) => v,
        (None, Some(e)) => -e,
        (None, None) => s.train_mse,
    }
}

fn snapshot_finite(s: &Snapshot) -> bool {
    s.elbo.is_none_or(f64::is_finite) && s.train_mse.is_finite() && s.val_mse.is_none_or(f64::is_finite)
}

fn grads_finite(g: &Gradients<f64>) -> bool {
    g.iter().all(|(_, t)| t.is_finite())
}

fn initial_model(
    config: &TrainConfig,
    train: &[PatientSequence],
    samples: &[PrefixSample],
) -> Result<DklModel, ModelError> {
    let mut init_rng = rng::stream(config.seed, "train.init");
    let mut params = init_params::<f64>(&config.extractor, &mut init_rng)?;
    let y = targets(samples);
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m = config.extractor.latent_dim;
    let mut model = DklModel {
        extractor: config.extractor.clone(),
        head: config.head,
        max_prefix: config.max_prefix,
        params: params.clone(),
        mle_variance: None,
    };
    match config.head {
        Head::Gp => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng::stream(config.seed, "train.warmup"));
            order.truncate(config.warmup_samples);
            let warm: Vec<PrefixSample> = order.iter().map(|&i| samples[i]).collect();
            let h = model.latents(train, &warm)?;
            let points: Vec<Vec<f64>> = h.data().chunks(m).map(<[f64]>::to_vec).collect();
            let k = config.num_inducing.min(points.len());
            let fit = kmeans(&points, k, config.seed, &KmeansConfig::default())?;
            let z = Tensor::matrix(k, m, fit.centers.concat())?;
            let kernel = SeKernel::new((m as f64).sqrt(), 1.0)?;
            let noise = (0.1 * var).max(1e-4);
            params.extend(SvgpState::at_prior(z, kernel, noise, mean)?.to_params());
        }
        Head::Mle => {
            let mut head = mle_params::<f64>(m, &mut init_rng);
            head.insert(MLE_BIAS, Tensor::scalar(mean));
            params.extend(head);
            model.mle_variance = Some(var.max(f64::MIN_POSITIVE));
        }
    }
    model.params = params;
    Ok(model)
}

/// Jointly fits the extractor and its head by minibatch Adam: the GP head
/// maximizes the ELBO (scaled by the number of prefix samples), the linear
/// head minimizes squared error. Returns the parameters of the epoch with
/// the best validation MSE, epoch 0 being the initialization.
pub fn train_dkl(
    config: &TrainConfig,
    train: &[PatientSequence],
    val: &[PatientSequence],
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    let started = Instant::now();
    let train_samples = prefix_samples(train, config.max_prefix);
    let val_samples = prefix_samples(val, config.max_prefix);
    if train_samples.is_empty() {
        return Err(ModelError::Invalid("no training samples with a target".into()));
    }
    let n = train_samples.len();
    let mut model = initial_model(config, train, &train_samples)?;

    let first = snapshot(&model, train, &train_samples, val, &val_samples)?;
    let mut log = vec![LogEntry {
        epoch: 0,
        elbo: first.elbo,
        train_loss: None,
        val_mse: first.val_mse,
        wall_ms: started.elapsed().as_millis() as u64,
    }];
    if !snapshot_finite(&first) {
        return Err(ModelError::Invalid("non-finite objective at initialization".into()));
    }
    let mut best = (score(&first), model.clone(), 0usize);
    let diverged = |epoch: usize, reason: String, best: &(f64, DklModel, usize), log: &[LogEntry]| {
        ModelError::Diverged {
            epoch,
            reason,
            last_good: Box::new(TrainOutcome {
                model: best.1.clone(),
                log: log.to_vec(),
                best_epoch: best.2,
            }),
        }
    };

    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        clip_norm: config.clip_norm,
        ..AdamConfig::default()
    });
    let b = config.batch_size.min(n);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::indexed_stream(config.seed, "train.batches", epoch as u64));
        let mut drop_rng = rng::indexed_stream(config.seed, "train.dropout", epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(b) {
            let step = (|| -> Result<f64, ModelError> {
                let tensors: Vec<Tensor<f64>> =
                    chunk.iter().map(|&i| sample_tensor(train, &train_samples[i])).collect();
                let refs: Vec<&Tensor<f64>> = tensors.iter().collect();
                let yb: Vec<f64> = chunk.iter().map(|&i| train_samples[i].target).collect();
                let tape = Tape::new();
                let bound = model.params.bind(&tape, true);
                let mut dropout = Dropout::train(config.extractor.dropout, &mut drop_rng);
                let h = encode_on_tape(&config.extractor, &bound, &tape, &refs, &mut dropout)?;
                let loss = match config.head {
                    Head::Gp => {
                        let vars = SvgpVars::from_bound(&bound)?;
                        elbo(&vars, h, &yb, n)?.elbo.scale(-1.0 / n as f64)?
                    }
                    Head::Mle => {
                        let target = tape.constant(Tensor::column(yb));
                        mle_head_on_tape(&bound, h)?.sub(target)?.square()?.mean()?
                    }
                };
                let value = loss.item();
                if !value.is_finite() {
                    return Err(TensorError::NonFinite { op: "loss" }.into());
                }
                let grads = tape.backward(loss)?;
                if !grads_finite(&grads) {
                    return Err(TensorError::NonFinite { op: "gradient" }.into());
                }
                adam.step(&mut model.params, &grads)?;
                if !model.params.is_finite() {
                    return Err(TensorError::NonFinite { op: "parameter update" }.into());
                }
                Ok(value)
            })();
            match step {
                Ok(value) => loss_sum += value,
                Err(e) if e.is_numerical() => return Err(diverged(epoch, e.to_string(), &best, &log)),
                Err(e) => return Err(e),
            }
            batches += 1;
        }
        let snap = match snapshot(&model, train, &train_samples, val, &val_samples) {
            Ok(s) if snapshot_finite(&s) => s,
            Ok(_) => return Err(diverged(epoch, "non-finite ELBO or validation MSE".into(), &best, &log)),
            Err(e) if e.is_numerical() => return Err(diverged(epoch, e.to_string(), &best, &log)),
            Err(e) => return Err(e),
        };
        let entry = LogEntry {
            epoch,
            elbo: snap.elbo,
            train_loss: Some(loss_sum / batches as f64),
            val_mse: snap.val_mse,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} elbo {:?} val_mse {:?}",
            loss_sum / batches as f64,
            entry.elbo,
            entry.val_mse
        );
        log.push(entry);
        if score(&snap) < best.0 {
            best = (score(&snap), model.clone(), epoch);
        }
    }

    let (_, mut chosen, best_epoch) = best;
    if chosen.head == Head::Mle {
        let preds = chosen.predict(train, &train_samples)?;
        let train_mse = mse(preds.iter().map(|p| p.mean), &targets(&train_samples));
        chosen.mle_variance = Some(train_mse.max(f64::MIN_POSITIVE));
    }
    Ok(TrainOutcome {
        model: chosen,
        log,
        best_epoch,
    })
}
