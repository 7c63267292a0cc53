use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::rng;

pub const MIN_PATIENTS: usize = 10;
const TRAIN_FRACTION: f64 = 0.7;
const VAL_FRACTION: f64 = 0.2;

/// Disjoint patient-id lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles the ids (after sorting, so input order is irrelevant) with a
/// stream derived from `seed` and cuts 70/20/10, rounding the train and
/// validation counts to the nearest patient.
pub fn split_patients(ids: &[String], seed: u64) -> Result<SplitIds, DataError> {
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(DataError::Invalid("duplicate patient ids".into()));
    }
    if ids.len() < MIN_PATIENTS {
        return Err(DataError::TooFewPatients {
            needed: MIN_PATIENTS,
            got: ids.len(),
        });
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    order.shuffle(&mut rng::stream(seed, "data.split"));
    let n = order.len();
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let n_val = ((VAL_FRACTION * n as f64).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitIds { train: order, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn hundred_patients_split_exactly() {
        let s = split_patients(&ids(100), 42).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 20, 10));
    }

    #[test]
    fn proportions_within_one_patient() {
        for n in 10..200 {
            let s = split_patients(&ids(n), 1).unwrap();
            assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            assert!((s.train.len() as f64 - 0.7 * n as f64).abs() <= 1.0);
            assert!((s.val.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
            assert!((s.test.len() as f64 - 0.1 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rev = ids(30);
        rev.reverse();
        assert_eq!(split_patients(&ids(30), 5).unwrap(), split_patients(&rev, 5).unwrap());
    }

    #[test]
    fn rejects_small_and_duplicate_inputs() {
        assert!(matches!(split_patients(&ids(9), 1), Err(DataError::TooFewPatients { .. })));
        let mut dup = ids(12);
        dup[3] = dup[4].clone();
        assert!(split_patients(&dup, 1).is_err());
    }
}
