use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    aggregate_acuity, encode_encounter, snellen_to_logmar, split_patients, AcuityCodes, DataError, FeatureGroup,
    FeatureLayout, NormalizationStats, RawEncounter, SplitIds, TextField,
};
use crate::extractors::parse_timestamp;

/// A validated encounter before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanEncounter {
    pub timestamp: NaiveDateTime,
    pub age: Option<f64>,
    /// One slot per [`TextField`], in layout order.
    pub embeddings: Vec<Option<Vec<f64>>>,
    /// Best acuity of the encounter; `None` when nothing was measured.
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleanPatient {
    pub patient_id: String,
    /// Ascending by timestamp with no repeated timestamp.
    pub encounters: Vec<CleanEncounter>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedRecord {
    pub features: Vec<f64>,
    pub timestamp: NaiveDateTime,
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientSequence {
    pub patient_id: String,
    pub records: Vec<EncodedRecord>,
}

impl PatientSequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Counts of what ingestion kept and dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub encounters_in: usize,
    pub encounters_kept: usize,
    pub duplicates_removed: usize,
    /// Rejected encounters by reason.
    pub rejected: BTreeMap<String, usize>,
    /// Kept encounters without any acuity measurement.
    pub without_target: usize,
    pub patients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub acuity_codes: AcuityCodes,
}

fn default_embedding_dim() -> usize {
    crate::data::DEFAULT_EMBEDDING_DIM
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            embedding_dim: default_embedding_dim(),
            acuity_codes: AcuityCodes::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.embedding_dim)
    }
}

/// Age sentinel used upstream for "unknown".
const AGE_SENTINEL: f64 = -1.0;

pub(crate) fn clean_encounter(
    raw: &RawEncounter,
    layout: &FeatureLayout,
    codes: &AcuityCodes,
) -> Result<CleanEncounter, DataError> {
    let timestamp = parse_timestamp(&raw.encounter_date)
        .map_err(|_| DataError::Invalid(format!("unparseable encounter_date {:?}", raw.encounter_date)))?;
    let age = match raw.age {
        None => None,
        Some(a) if a == AGE_SENTINEL => None,
        Some(a) if a.is_finite() && a >= 0.0 => Some(a),
        Some(a) => return Err(DataError::Invalid(format!("invalid age {a}"))),
    };
    let mut embeddings = vec![None; 7];
    for (key, v) in &raw.embedded_fields {
        let field = TextField::from_key(key).ok_or_else(|| DataError::UnknownField(key.clone()))?;
        if v.len() != layout.embedding_dim {
            return Err(DataError::Embedding {
                field: key.clone(),
                expected: layout.embedding_dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite value in embedding {key}")));
        }
        embeddings[field.position()] = Some(v.clone());
    }
    let mut measured = Vec::with_capacity(raw.acuity_measurements.len());
    for entry in &raw.acuity_measurements {
        if let Some(v) = snellen_to_logmar(entry, codes)? {
            measured.push(v);
        }
    }
    Ok(CleanEncounter {
        timestamp,
        age,
        embeddings,
        target: aggregate_acuity(&measured),
    })
}

fn rejection_reason(err: &DataError) -> &'static str {
    match err {
        DataError::Acuity(_) => "acuity",
        DataError::Embedding { .. } => "embedding_length",
        DataError::UnknownField(_) => "unknown_field",
        _ => "invalid",
    }
}

/// Validates encounters, groups them by patient, sorts each patient by
/// timestamp and keeps the first of any encounters sharing a timestamp.
/// Patients are returned ordered by id.
pub fn clean_encounters(
    raws: &[RawEncounter],
    layout: &FeatureLayout,
    codes: &AcuityCodes,
) -> (Vec<CleanPatient>, IngestReport) {
    let mut report = IngestReport {
        encounters_in: raws.len(),
        ..IngestReport::default()
    };
    let mut by_patient: BTreeMap<&str, Vec<CleanEncounter>> = BTreeMap::new();
    for raw in raws {
        match clean_encounter(raw, layout, codes) {
            Ok(enc) => by_patient.entry(raw.patient_id.as_str()).or_default().push(enc),
            Err(e) => {
                log::debug!("skipping encounter of {}: {e}", raw.patient_id);
                *report.rejected.entry(rejection_reason(&e).to_string()).or_default() += 1;
            }
        }
    }
    let patients: Vec<CleanPatient> = by_patient
        .into_iter()
        .map(|(id, mut encounters)| {
            encounters.sort_by_key(|e| e.timestamp);
            let before = encounters.len();
            encounters.dedup_by_key(|e| e.timestamp);
            report.duplicates_removed += before - encounters.len();
            CleanPatient {
                patient_id: id.to_string(),
                encounters,
            }
        })
        .collect();
    report.patients = patients.len();
    report.encounters_kept = patients.iter().map(|p| p.encounters.len()).sum();
    report.without_target = patients
        .iter()
        .flat_map(|p| &p.encounters)
        .filter(|e| e.target.is_none())
        .count();
    (patients, report)
}

/// Orders raw encounters by patient id and timestamp and drops later
/// encounters repeating a patient's timestamp. Encounters with unparseable
/// dates sort last within their patient and are kept.
pub fn sort_and_dedup(raws: &[RawEncounter]) -> Vec<RawEncounter> {
    let mut keyed: Vec<(&str, Option<NaiveDateTime>, &RawEncounter)> = raws
        .iter()
        .map(|r| (r.patient_id.as_str(), parse_timestamp(&r.encounter_date).ok(), r))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(b.0).then_with(|| match (a.1, b.1) {
            (Some(x), Some(y)) => x.cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        })
    });
    keyed.dedup_by(|b, a| a.0 == b.0 && a.1.is_some() && a.1 == b.1);
    keyed.into_iter().map(|(_, _, r)| r.clone()).collect()
}

/// Encodes patients with fixed statistics, in input order.
pub fn encode_patients(
    patients: &[CleanPatient],
    stats: &NormalizationStats,
    layout: &FeatureLayout,
) -> Result<Vec<PatientSequence>, DataError> {
    patients
        .par_iter()
        .map(|p| {
            Ok(PatientSequence {
                patient_id: p.patient_id.clone(),
                records: p
                    .encounters
                    .iter()
                    .map(|e| encode_encounter(e, stats, layout))
                    .collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

/// Train/validation/test sequences with statistics fit on train only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub layout: FeatureLayout,
    pub stats: NormalizationStats,
    pub ids: SplitIds,
    pub train: Vec<PatientSequence>,
    pub val: Vec<PatientSequence>,
    pub test: Vec<PatientSequence>,
}

impl SplitDataset {
    /// Zeroes the group's features, presence bit included, in every split.
    pub fn ablate(&mut self, group: FeatureGroup) {
        let idx = group.indices(&self.layout);
        for seq in self.train.iter_mut().chain(&mut self.val).chain(&mut self.test) {
            for r in &mut seq.records {
                for &i in &idx {
                    r.features[i] = 0.0;
                }
            }
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &PatientSequence> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Splits patients by `seed`, fits statistics on the training patients and
/// encodes every split.
pub fn prepare_dataset(patients: &[CleanPatient], layout: &FeatureLayout, seed: u64) -> Result<SplitDataset, DataError> {
    let ids: Vec<String> = patients.iter().map(|p| p.patient_id.clone()).collect();
    let split = split_patients(&ids, seed)?;
    let by_id: BTreeMap<&str, &CleanPatient> = patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    let pick = |ids: &[String]| -> Vec<CleanPatient> { ids.iter().map(|id| by_id[id.as_str()].clone()).collect() };
    let (train, val, test) = (pick(&split.train), pick(&split.val), pick(&split.test));
    let stats = NormalizationStats::fit(layout, train.iter().flat_map(|p| &p.encounters));
    Ok(SplitDataset {
        layout: *layout,
        train: encode_patients(&train, &stats, layout)?,
        val: encode_patients(&val, &stats, layout)?,
        test: encode_patients(&test, &stats, layout)?,
        stats,
        ids: split,
    })
}
