use crate::autodiff::{BoundParams, ParamStore, Tensor, Var};
use crate::extractors::init::uniform;
use crate::extractors::ExtractorError;
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const MLE_WEIGHT: &str = "mle.weight";
pub const MLE_BIAS: &str = "mle.bias";

/// Linear head `wᵀh + b` over a latent of width `latent_dim`.
pub fn mle_params<T: Scalar>(latent_dim: usize, rng: &mut Rng) -> ParamStore<T> {
    let mut store = ParamStore::new();
    let bound = 1.0 / (latent_dim as f64).sqrt();
    store.insert(MLE_WEIGHT, uniform(rng, latent_dim, 1, bound));
    store.insert(MLE_BIAS, Tensor::scalar(T::zero()));
    store
}

pub fn mle_head<T: Scalar>(params: &ParamStore<T>, latent: &[T]) -> Result<T, ExtractorError> {
    let w = params.require(MLE_WEIGHT)?;
    let b = params.require(MLE_BIAS)?.item();
    if w.len() != latent.len() {
        return Err(ExtractorError::Input(format!(
            "latent of length {} for a head of width {}",
            latent.len(),
            w.len()
        )));
    }
    if latent.iter().any(|v| !v.is_finite()) {
        return Err(ExtractorError::Input("non-finite latent".into()));
    }
    Ok(w.data().iter().zip(latent).map(|(&a, &x)| a * x).sum::<T>() + b)
}

/// `[b, 1]` predictions for latents `h` of shape `[b, m]`.
pub fn mle_head_on_tape<'t, T: Scalar>(bound: &BoundParams<'t, T>, h: Var<'t, T>) -> Result<Var<'t, T>, ExtractorError> {
    Ok(h.matmul(bound.get(MLE_WEIGHT)?)?.add(bound.get(MLE_BIAS)?)?)
}
