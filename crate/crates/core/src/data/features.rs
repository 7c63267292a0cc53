use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::preprocess::{clean_encounter, CleanEncounter, EncodedRecord};
use crate::data::{AcuityCodes, DataError, RawEncounter};
use crate::extractors::cyclical_encode;

pub const DEFAULT_EMBEDDING_DIM: usize = 768;

/// The seven embedded text fields, in feature-vector order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextField {
    Specialty,
    VisitType,
    ReasonForVisit,
    Procedures,
    Diagnoses,
    Medications,
    LabResults,
}

impl TextField {
    pub const ALL: [TextField; 7] = [
        TextField::Specialty,
        TextField::VisitType,
        TextField::ReasonForVisit,
        TextField::Procedures,
        TextField::Diagnoses,
        TextField::Medications,
        TextField::LabResults,
    ];

    /// Key used in `RawEncounter::embedded_fields`.
    pub fn key(self) -> &'static str {
        match self {
            TextField::Specialty => "specialty",
            TextField::VisitType => "visit_type",
            TextField::ReasonForVisit => "reason_for_visit",
            TextField::Procedures => "procedures",
            TextField::Diagnoses => "diagnoses",
            TextField::Medications => "medications",
            TextField::LabResults => "lab_results",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.key() == key)
    }

    pub fn position(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).expect("listed")
    }
}

/// Index map of an encoded record:
///
/// | indices | content |
/// |---|---|
/// | `0` | age, z-normalized (0 when unknown) |
/// | `1..7` | day sin/cos, month sin/cos, year sin/cos |
/// | `7 + k·e .. 7 + (k+1)·e` | embedding of text field `k`, z-normalized |
/// | `7 + 7·e + k` | presence bit of text field `k` |
///
/// with fields ordered as in [`TextField::ALL`] and `e` the embedding width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub embedding_dim: usize,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl FeatureLayout {
    pub const AGE: usize = 0;
    pub const CYCLICAL: Range<usize> = 1..7;
    const EMBEDDING_START: usize = 7;

    pub fn new(embedding_dim: usize) -> Self {
        Self { embedding_dim }
    }

    pub fn dim(&self) -> usize {
        Self::EMBEDDING_START + 7 * self.embedding_dim + 7
    }

    pub fn embedding(&self, field: TextField) -> Range<usize> {
        let start = Self::EMBEDDING_START + field.position() * self.embedding_dim;
        start..start + self.embedding_dim
    }

    pub fn presence(&self, field: TextField) -> usize {
        Self::EMBEDDING_START + 7 * self.embedding_dim + field.position()
    }

    /// Contiguous named segments covering every index once, in order.
    pub fn segments(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![
            ("age_z".to_string(), Self::AGE..Self::AGE + 1),
            ("cyclical".to_string(), Self::CYCLICAL),
        ];
        for f in TextField::ALL {
            out.push((format!("emb.{}", f.key()), self.embedding(f)));
        }
        for f in TextField::ALL {
            let p = self.presence(f);
            out.push((format!("present.{}", f.key()), p..p + 1));
        }
        out
    }

    /// Name of every feature index.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["age_z".to_string()];
        for c in ["day_sin", "day_cos", "month_sin", "month_cos", "year_sin", "year_cos"] {
            names.push(c.to_string());
        }
        for f in TextField::ALL {
            names.extend((0..self.embedding_dim).map(|i| format!("{}[{i}]", f.key())));
        }
        names.extend(TextField::ALL.iter().map(|f| format!("present.{}", f.key())));
        names
    }
}

/// Feature categories that can be removed together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureGroup {
    MedName,
    Surgeries,
    VisitType,
    ProcName,
    DxName,
    Specialty,
    ReasonForVisit,
    Age,
    LabResults,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 9] = [
        FeatureGroup::MedName,
        FeatureGroup::Surgeries,
        FeatureGroup::VisitType,
        FeatureGroup::ProcName,
        FeatureGroup::DxName,
        FeatureGroup::Specialty,
        FeatureGroup::ReasonForVisit,
        FeatureGroup::Age,
        FeatureGroup::LabResults,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::MedName => "MED_NAME",
            FeatureGroup::Surgeries => "SURGERIES",
            FeatureGroup::VisitType => "VISIT_TYPE",
            FeatureGroup::ProcName => "PROC_NAME",
            FeatureGroup::DxName => "DX_NAME",
            FeatureGroup::Specialty => "SPECIALTY",
            FeatureGroup::ReasonForVisit => "REASON_FOR_VISIT",
            FeatureGroup::Age => "AGE",
            FeatureGroup::LabResults => "LAB_RESULTS",
        }
    }

    /// The text field backing this group; `None` for age. Surgeries are
    /// recorded in the procedures field.
    pub fn field(self) -> Option<TextField> {
        match self {
            FeatureGroup::MedName => Some(TextField::Medications),
            FeatureGroup::Surgeries | FeatureGroup::ProcName => Some(TextField::Procedures),
            FeatureGroup::VisitType => Some(TextField::VisitType),
            FeatureGroup::DxName => Some(TextField::Diagnoses),
            FeatureGroup::Specialty => Some(TextField::Specialty),
            FeatureGroup::ReasonForVisit => Some(TextField::ReasonForVisit),
            FeatureGroup::LabResults => Some(TextField::LabResults),
            FeatureGroup::Age => None,
        }
    }

    /// Feature indices owned by the group, including its presence bit.
    pub fn indices(self, layout: &FeatureLayout) -> Vec<usize> {
        match self.field() {
            None => vec![FeatureLayout::AGE],
            Some(f) => layout.embedding(f).chain(std::iter::once(layout.presence(f))).collect(),
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|g| g.name()).collect::<Vec<_>>().join(", ")
    }
}

impl std::fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureGroup {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                DataError::Invalid(format!("unknown feature group {s:?}; valid groups: {}", Self::valid_names()))
            })
    }
}

/// Z-normalization statistics, fit on training encounters only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub age_mean: f64,
    pub age_std: f64,
    /// Per-dimension mean of each field's embeddings, fields concatenated in
    /// layout order.
    pub embedding_mean: Vec<f64>,
    pub embedding_std: Vec<f64>,
    pub embedding_dim: usize,
}

/// Standard deviations below this are replaced by 1.
const MIN_STD: f64 = 1e-12;

/// Population mean and standard deviation, two-pass.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    (mean, if std < MIN_STD { 1.0 } else { std })
}

impl NormalizationStats {
    /// Fits the statistics over the given encounters. Unknown ages and
    /// absent embeddings do not contribute.
    pub fn fit<'a>(layout: &FeatureLayout, encounters: impl IntoIterator<Item = &'a CleanEncounter>) -> Self {
        let e = layout.embedding_dim;
        let mut ages = Vec::new();
        let mut present: Vec<Vec<&[f64]>> = vec![Vec::new(); 7];
        for enc in encounters {
            ages.extend(enc.age);
            for (k, emb) in enc.embeddings.iter().enumerate() {
                if let Some(v) = emb {
                    present[k].push(v);
                }
            }
        }
        let (age_mean, age_std) = mean_std(ages.iter().copied());
        let mut embedding_mean = Vec::with_capacity(7 * e);
        let mut embedding_std = Vec::with_capacity(7 * e);
        for vectors in &present {
            for j in 0..e {
                let (m, sd) = mean_std(vectors.iter().map(|v| v[j]));
                embedding_mean.push(m);
                embedding_std.push(sd);
            }
        }
        Self {
            age_mean,
            age_std,
            embedding_mean,
            embedding_std,
            embedding_dim: e,
        }
    }
}

/// Feature vector of a cleaned encounter, laid out as in [`FeatureLayout`].
pub fn encode_encounter(enc: &CleanEncounter, stats: &NormalizationStats, layout: &FeatureLayout) -> Result<EncodedRecord, DataError> {
    let e = layout.embedding_dim;
    if stats.embedding_dim != e {
        return Err(DataError::Invalid(format!(
            "normalization statistics for width {} used with layout width {e}",
            stats.embedding_dim
        )));
    }
    let mut features = vec![0.0; layout.dim()];
    features[FeatureLayout::AGE] = enc.age.map_or(0.0, |a| (a - stats.age_mean) / stats.age_std);
    let cyc: [f64; 6] = cyclical_encode(enc.timestamp.date());
    features[FeatureLayout::CYCLICAL].copy_from_slice(&cyc);
    for (k, field) in TextField::ALL.into_iter().enumerate() {
        if let Some(v) = &enc.embeddings[k] {
            if v.len() != e {
                return Err(DataError::Embedding {
                    field: field.key().into(),
                    expected: e,
                    got: v.len(),
                });
            }
            let block = layout.embedding(field);
            for (j, (dst, x)) in features[block].iter_mut().zip(v).enumerate() {
                *dst = (x - stats.embedding_mean[k * e + j]) / stats.embedding_std[k * e + j];
            }
            features[layout.presence(field)] = 1.0;
        }
    }
    Ok(EncodedRecord {
        features,
        timestamp: enc.timestamp,
        target: enc.target,
    })
}

/// Cleans and encodes a single raw encounter.
pub fn assemble_features(
    raw: &RawEncounter,
    stats: &NormalizationStats,
    layout: &FeatureLayout,
    codes: &AcuityCodes,
) -> Result<EncodedRecord, DataError> {
    encode_encounter(&clean_encounter(raw, layout, codes)?, stats, layout)
}
