use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

/// Parameters registered on one tape.
pub struct BoundParams<'t, T: Scalar> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> BoundParams<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>, TensorError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::MissingParam { name: name.to_string() })
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>, TensorError> {
        self.get(name)
            .ok_or_else(|| TensorError::MissingParam { name: name.to_string() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn extend(&mut self, other: ParamStore<T>) {
        self.entries.extend(other.entries);
    }

    /// Entries whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Registers every entry on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundParams<'t, T> {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(k.clone(), v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: Checkpoint::FORMAT.to_string(),
            params: self
                .entries
                .iter()
                .map(|(k, v)| {
                    let hex = v
                        .data()
                        .iter()
                        .map(|x| format!("{:016x}", x.as_f64().to_bits()))
                        .collect();
                    (
                        k.clone(),
                        EncodedTensor {
                            shape: v.shape().to_vec(),
                            hex,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, TensorError> {
        if ckpt.format != Checkpoint::FORMAT {
            return Err(TensorError::Checkpoint(format!("unknown format {:?}", ckpt.format)));
        }
        let mut entries = BTreeMap::new();
        for (name, enc) in &ckpt.params {
            if enc.hex.len() % 16 != 0 {
                return Err(TensorError::Checkpoint(format!("{name}: truncated hex payload")));
            }
            let data = enc
                .hex
                .as_bytes()
                .chunks(16)
                .map(|c| {
                    let s = std::str::from_utf8(c).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
                    let bits = u64::from_str_radix(s, 16)
                        .map_err(|e| TensorError::Checkpoint(format!("{name}: {e}")))?;
                    Ok(T::of(f64::from_bits(bits)))
                })
                .collect::<Result<Vec<T>, TensorError>>()?;
            entries.insert(name.clone(), Tensor::new(enc.shape.clone(), data)?);
        }
        Ok(Self { entries })
    }
}

/// Serialized parameter map. Every value is stored as the 16-digit hex of
/// its IEEE-754 binary64 bit pattern, so 64-bit floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub params: BTreeMap<String, EncodedTensor>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "trajgp-params-v1";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub hex: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_round_trips_bit_exactly(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut store = ParamStore::new();
            store.insert("a.w", Tensor::vector(values.clone()));
            store.insert("b", Tensor::scalar(values[0]));
            let json = serde_json::to_string(&store.to_checkpoint()).unwrap();
            let back: Checkpoint = serde_json::from_str(&json).unwrap();
            let restored = ParamStore::<f64>::from_checkpoint(&back).unwrap();
            for (name, t) in store.iter() {
                let r = restored.get(name).unwrap();
                prop_assert_eq!(t.shape(), r.shape());
                for (x, y) in t.data().iter().zip(r.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_unknown_format() {
        let mut ck = ParamStore::<f64>::new().to_checkpoint();
        ck.format = "other".into();
        assert!(ParamStore::<f64>::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn f32_round_trips_through_f64_bits() {
        let mut store = ParamStore::<f32>::new();
        store.insert("x", Tensor::vector(vec![0.1f32, -3.25, 1e-30]));
        let back = ParamStore::<f32>::from_checkpoint(&store.to_checkpoint()).unwrap();
        assert_eq!(store, back);
    }
}
