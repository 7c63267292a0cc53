use rand::Rng as _;

use crate::autodiff::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::extractors::{check_sequence, Arch, ExtractorConfig, ExtractorError};
use crate::rng::Rng;
use crate::scalar::Scalar;

const LAYER_NORM_EPS: f64 = 1e-5;
/// Prefixes per tape when encoding without gradients.
const EVAL_CHUNK: usize = 64;

/// Inverted dropout with masks drawn from a caller-owned generator.
/// Without a generator (evaluation) it is the identity.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut Rng>,
}

impl<'r> Dropout<'r> {
    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut Rng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn apply<'t, T: Scalar>(&mut self, x: Var<'t, T>) -> Result<Var<'t, T>, ExtractorError> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let scale = T::of(1.0 / keep);
        let shape = x.shape();
        let n = shape.iter().product();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        Ok(x.mul(x.tape().constant(Tensor::new(shape, mask)?))?)
    }
}

struct Linear<'t, T: Scalar> {
    weight: Var<'t, T>,
    bias: Var<'t, T>,
}

impl<'t, T: Scalar> Linear<'t, T> {
    fn get(bound: &BoundParams<'t, T>, name: &str) -> Result<Self, ExtractorError> {
        Ok(Self {
            weight: bound.get(&format!("{name}.weight"))?,
            bias: bound.get(&format!("{name}.bias"))?,
        })
    }

    fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>, ExtractorError> {
        Ok(x.matmul(self.weight)?.add(self.bias)?)
    }
}

/// Latents `[b, m]` for a batch of prefixes, each `[tᵢ, d]`.
pub fn encode_on_tape<'t, T: Scalar>(
    config: &ExtractorConfig,
    bound: &BoundParams<'t, T>,
    tape: &'t Tape<T>,
    seqs: &[&Tensor<T>],
    dropout: &mut Dropout<'_>,
) -> Result<Var<'t, T>, ExtractorError> {
    config.validate()?;
    if seqs.is_empty() {
        return Err(ExtractorError::Input("empty batch".into()));
    }
    let mut lengths = Vec::with_capacity(seqs.len());
    let mut stacked = Vec::new();
    for s in seqs {
        check_sequence(config, s)?;
        lengths.push(s.rows());
        stacked.extend_from_slice(s.data());
    }
    let total: usize = lengths.iter().sum();
    let x = tape.constant(Tensor::matrix(total, config.input_dim, stacked)?);
    let pooled = match config.arch {
        Arch::Transformer => transformer(config, bound, tape, x, &lengths, dropout)?,
        _ => recurrent(config, bound, tape, x, &lengths, dropout)?,
    };
    let hidden = Linear::get(bound, "fe.dec1")?.forward(pooled)?.relu()?;
    let hidden = dropout.apply(hidden)?;
    Linear::get(bound, "fe.dec2")?.forward(hidden)
}

fn offsets(lengths: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(lengths.len());
    let mut acc = 0;
    for &l in lengths {
        out.push(acc);
        acc += l;
    }
    out
}

/// Runs the stacked recurrent layers and returns the final hidden state of
/// the top layer for every sequence, `[b, h]`.
fn recurrent<'t, T: Scalar>(
    config: &ExtractorConfig,
    bound: &BoundParams<'t, T>,
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    lengths: &[usize],
    dropout: &mut Dropout<'_>,
) -> Result<Var<'t, T>, ExtractorError> {
    let h = config.hidden_dim;
    let starts = offsets(lengths);
    let mut input = x;
    let mut finals = Vec::with_capacity(lengths.len());
    for l in 0..config.num_layers {
        let p = format!("fe.rnn{l}");
        let w_ih = bound.get(&format!("{p}.w_ih"))?;
        let w_hh = bound.get(&format!("{p}.w_hh"))?;
        let b_ih = bound.get(&format!("{p}.b_ih"))?;
        let b_hh = bound.get(&format!("{p}.b_hh"))?;
        let projected = input.matmul(w_ih)?.add(b_ih)?;
        let last_layer = l + 1 == config.num_layers;
        let mut outputs = Vec::new();
        finals.clear();
        for (&start, &len) in starts.iter().zip(lengths) {
            let xp = projected.slice(0, start, start + len)?;
            let mut state = tape.constant(Tensor::zeros(&[1, h]));
            let mut cell = tape.constant(Tensor::zeros(&[1, h]));
            for s in 0..len {
                let xs = xp.slice(0, s, s + 1)?;
                let hp = if s == 0 { b_hh } else { state.matmul(w_hh)?.add(b_hh)? };
                match config.arch {
                    Arch::Rnn => state = xs.add(hp)?.tanh()?,
                    Arch::Gru => {
                        let r = xs.slice(1, 0, h)?.add(hp.slice(1, 0, h)?)?.sigmoid()?;
                        let z = xs.slice(1, h, 2 * h)?.add(hp.slice(1, h, 2 * h)?)?.sigmoid()?;
                        let n = xs
                            .slice(1, 2 * h, 3 * h)?
                            .add(r.mul(hp.slice(1, 2 * h, 3 * h)?)?)?
                            .tanh()?;
                        state = n.add(z.mul(state.sub(n)?)?)?;
                    }
                    Arch::Lstm => {
                        let g = xs.add(hp)?;
                        let i = g.slice(1, 0, h)?.sigmoid()?;
                        let f = g.slice(1, h, 2 * h)?.sigmoid()?;
                        let c = g.slice(1, 2 * h, 3 * h)?.tanh()?;
                        let o = g.slice(1, 3 * h, 4 * h)?.sigmoid()?;
                        cell = f.mul(cell)?.add(i.mul(c)?)?;
                        state = o.mul(cell.tanh()?)?;
                    }
                    Arch::Transformer => unreachable!("transformer handled separately"),
                }
                if !last_layer {
                    outputs.push(state);
                }
            }
            finals.push(state);
        }
        if !last_layer {
            input = dropout.apply(tape.concat(&outputs, 0)?)?;
        }
    }
    dropout.apply(tape.concat(&finals, 0)?)
}

/// Post-norm encoder layers with full self-attention per sequence, then mean
/// pooling over positions, `[b, model_dim]`.
fn transformer<'t, T: Scalar>(
    config: &ExtractorConfig,
    bound: &BoundParams<'t, T>,
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    lengths: &[usize],
    dropout: &mut Dropout<'_>,
) -> Result<Var<'t, T>, ExtractorError> {
    let d = config.hidden_dim;
    let heads = config.num_heads;
    let hd = d / heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let eps = T::of(LAYER_NORM_EPS);
    let starts = offsets(lengths);
    let mut h = Linear::get(bound, "fe.input")?.forward(x)?;
    for l in 0..config.num_layers {
        let p = format!("fe.tf{l}");
        let q = Linear::get(bound, &format!("{p}.q"))?.forward(h)?;
        let k = Linear::get(bound, &format!("{p}.k"))?.forward(h)?;
        let v = Linear::get(bound, &format!("{p}.v"))?.forward(h)?;
        let mut per_seq = Vec::with_capacity(lengths.len());
        for (&start, &len) in starts.iter().zip(lengths) {
            let (qs, ks, vs) = (
                q.slice(0, start, start + len)?,
                k.slice(0, start, start + len)?,
                v.slice(0, start, start + len)?,
            );
            let mut head_out = Vec::with_capacity(heads);
            for a in 0..heads {
                let (c0, c1) = (a * hd, (a + 1) * hd);
                let scores = qs.slice(1, c0, c1)?.matmul(ks.slice(1, c0, c1)?.t()?)?.scale(scale)?;
                head_out.push(scores.softmax()?.matmul(vs.slice(1, c0, c1)?)?);
            }
            per_seq.push(if heads == 1 { head_out[0] } else { tape.concat(&head_out, 1)? });
        }
        let attn = Linear::get(bound, &format!("{p}.o"))?.forward(tape.concat(&per_seq, 0)?)?;
        let attn = dropout.apply(attn)?;
        h = layer_norm(bound, &format!("{p}.ln1"), h.add(attn)?, eps)?;
        let ff = Linear::get(bound, &format!("{p}.ff1"))?.forward(h)?.relu()?;
        let ff = Linear::get(bound, &format!("{p}.ff2"))?.forward(ff)?;
        let ff = dropout.apply(ff)?;
        h = layer_norm(bound, &format!("{p}.ln2"), h.add(ff)?, eps)?;
    }
    let pooled: Vec<Var<'t, T>> = starts
        .iter()
        .zip(lengths)
        .map(|(&s, &len)| h.slice(0, s, s + len)?.mean_axis(0))
        .collect::<Result<_, _>>()?;
    Ok(tape.concat(&pooled, 0)?)
}

fn layer_norm<'t, T: Scalar>(
    bound: &BoundParams<'t, T>,
    name: &str,
    x: Var<'t, T>,
    eps: T,
) -> Result<Var<'t, T>, ExtractorError> {
    let gamma = bound.get(&format!("{name}.gamma"))?;
    let beta = bound.get(&format!("{name}.beta"))?;
    Ok(x.layer_norm(eps)?.mul(gamma)?.add(beta)?)
}

/// Latent for one prefix `[t, d]` in evaluation mode.
pub fn encode_prefix<T: Scalar>(
    config: &ExtractorConfig,
    params: &ParamStore<T>,
    seq: &Tensor<T>,
) -> Result<Vec<T>, ExtractorError> {
    Ok(encode_batch(config, params, &[seq])?.into_data())
}

/// Latents `[b, m]` for many prefixes in evaluation mode.
pub fn encode_batch<T: Scalar>(
    config: &ExtractorConfig,
    params: &ParamStore<T>,
    seqs: &[&Tensor<T>],
) -> Result<Tensor<T>, ExtractorError> {
    let m = config.latent_dim;
    let mut data = Vec::with_capacity(seqs.len() * m);
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let bound = params.bind(&tape, false);
        let out = encode_on_tape(config, &bound, &tape, chunk, &mut Dropout::eval())?;
        data.extend_from_slice(out.value().data());
    }
    Ok(Tensor::matrix(seqs.len(), m, data)?)
}
