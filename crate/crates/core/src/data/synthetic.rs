use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{logmar_to_snellen, DataError, RawEncounter, TextField};
use crate::rng::{self, Rng};

/// Planted progression patterns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    StableLow,
    Progressing,
    StableHigh,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::StableLow, Archetype::Progressing, Archetype::StableHigh];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Archetype::StableLow => "stable_low",
            Archetype::Progressing => "progressing",
            Archetype::StableHigh => "stable_high",
        }
    }

    /// Expected logMAR `years` after the first visit.
    pub fn mean_logmar(self, years: f64) -> f64 {
        match self {
            Archetype::StableLow => 0.1,
            Archetype::Progressing => 0.3 + 0.7 * (1.0 - (-years / 1.5).exp()),
            Archetype::StableHigh => 1.2,
        }
    }

    /// Standard deviation of a visit's logMAR about the curve.
    pub fn noise_sd(self) -> f64 {
        match self {
            Archetype::StableLow => 0.05,
            Archetype::Progressing => 0.15,
            Archetype::StableHigh => 0.08,
        }
    }

    fn baseline_age(self) -> f64 {
        match self {
            Archetype::StableLow => 48.0,
            Archetype::Progressing => 63.0,
            Archetype::StableHigh => 72.0,
        }
    }
}

impl std::str::FromStr for Archetype {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| DataError::Invalid(format!("unknown archetype {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Mixture weights of stable-low, progressing and stable-high patients.
    pub weights: [f64; 3],
    pub embedding_dim: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    pub mean_gap_days: f64,
    /// Fields whose embeddings carry the archetype direction.
    pub signal_fields: Vec<TextField>,
    /// Field whose embedding also tracks the current expected logMAR.
    pub severity_field: Option<TextField>,
    pub signal_strength: f64,
    pub severity_strength: f64,
    /// Per-dimension standard deviation of embedding noise.
    pub embedding_noise: f64,
    /// Probability that a field is absent from an encounter.
    pub missing_rate: f64,
    /// Probability that an encounter has no acuity measurement.
    pub unmeasured_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            weights: [0.913, 0.074, 0.012],
            embedding_dim: crate::data::DEFAULT_EMBEDDING_DIM,
            min_visits: 3,
            max_visits: 12,
            mean_gap_days: 90.0,
            signal_fields: vec![TextField::Procedures, TextField::Diagnoses, TextField::Medications],
            severity_field: Some(TextField::Diagnoses),
            signal_strength: 1.0,
            severity_strength: 1.0,
            embedding_noise: 1.0,
            missing_rate: 0.05,
            unmeasured_rate: 0.02,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) || self.weights.iter().sum::<f64>() <= 0.0 {
            return bad(format!("archetype weights must be non-negative with a positive sum, got {:?}", self.weights));
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.min_visits == 0 || self.max_visits < self.min_visits {
            return bad(format!("visit range {}..={} is empty", self.min_visits, self.max_visits));
        }
        if !(self.mean_gap_days.is_finite() && self.mean_gap_days > 0.0) {
            return bad("mean_gap_days must be positive".into());
        }
        for (name, p) in [("missing_rate", self.missing_rate), ("unmeasured_rate", self.unmeasured_rate)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("severity_strength", self.severity_strength),
            ("embedding_noise", self.embedding_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortLabel {
    pub patient_id: String,
    pub archetype: Archetype,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCohort {
    pub encounters: Vec<RawEncounter>,
    pub labels: Vec<CohortLabel>,
}

impl SyntheticCohort {
    pub fn label_map(&self) -> BTreeMap<&str, Archetype> {
        self.labels.iter().map(|l| (l.patient_id.as_str(), l.archetype)).collect()
    }
}

/// Archetype counts by largest remainder, so proportions are as exact as the
/// patient count allows.
fn apportion(n: usize, weights: &[f64; 3]) -> [usize; 3] {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = quotas[k].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for k in order {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

fn gaussian_vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

const SEXES: [&str; 2] = ["F", "M"];
const RACES: [&str; 4] = ["asian", "black", "white", "other"];
const ETHNICITIES: [&str; 2] = ["hispanic", "non_hispanic"];
const LOGMAR_RANGE: (f64, f64) = (-0.3, 1.8);

/// Generates a cohort of `n_patients` with planted archetypes. Each patient
/// draws from its own stream, so a patient's records depend only on the
/// seed, its index and its archetype.
pub fn generate_synthetic_cohort(
    n_patients: usize,
    seed: u64,
    config: &SyntheticConfig,
) -> Result<SyntheticCohort, DataError> {
    config.validate()?;
    if n_patients < 3 {
        return Err(DataError::Invalid(format!("need at least 3 patients, got {n_patients}")));
    }
    let e = config.embedding_dim;
    let mut dir_rng = rng::stream(seed, "synthetic.directions");
    let directions: Vec<Vec<Vec<f64>>> = Archetype::ALL
        .iter()
        .map(|_| TextField::ALL.iter().map(|_| gaussian_vector(&mut dir_rng, e)).collect())
        .collect();
    let severity_dir = gaussian_vector(&mut dir_rng, e);

    let counts = apportion(n_patients, &config.weights);
    let mut assignment: Vec<Archetype> = Archetype::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&a, c)| std::iter::repeat_n(a, c))
        .collect();
    assignment.shuffle(&mut rng::stream(seed, "synthetic.assign"));

    let gap = Exp::new(1.0 / config.mean_gap_days).expect("positive rate");
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date");
    let mut encounters = Vec::new();
    let mut labels = Vec::with_capacity(n_patients);
    for (i, &arch) in assignment.iter().enumerate() {
        let mut r = rng::indexed_stream(seed, "synthetic.patient", i as u64);
        let patient_id = format!("P{i:06}");
        let visits = r.random_range(config.min_visits..=config.max_visits);
        let mut date = start + Duration::days(r.random_range(0..3650));
        let age0 = Normal::new(arch.baseline_age(), 8.0).expect("valid").sample(&mut r).clamp(18.0, 95.0);
        let sex = SEXES[r.random_range(0..SEXES.len())];
        let race = RACES[r.random_range(0..RACES.len())];
        let ethnicity = ETHNICITIES[r.random_range(0..ETHNICITIES.len())];
        let mut days = 0i64;
        for v in 0..visits {
            if v > 0 {
                let step = (gap.sample(&mut r) as f64).round().max(1.0) as i64;
                days += step;
                date += Duration::days(step);
            }
            let years = days as f64 / 365.25;
            let curve = arch.mean_logmar(years);
            let noise: f64 = StandardNormal.sample(&mut r);
            let logmar = (curve + arch.noise_sd() * noise).clamp(LOGMAR_RANGE.0, LOGMAR_RANGE.1);

            let mut embedded_fields = BTreeMap::new();
            for (k, field) in TextField::ALL.into_iter().enumerate() {
                if r.random::<f64>() < config.missing_rate {
                    continue;
                }
                let signal = if config.signal_fields.contains(&field) { config.signal_strength } else { 0.0 };
                let severity = if config.severity_field == Some(field) {
                    config.severity_strength * (curve - 0.6)
                } else {
                    0.0
                };
                let dir = &directions[arch.index()][k];
                let vec: Vec<f64> = (0..e)
                    .map(|j| {
                        let eps: f64 = StandardNormal.sample(&mut r);
                        signal * dir[j] + severity * severity_dir[j] + config.embedding_noise * eps
                    })
                    .collect();
                embedded_fields.insert(field.key().to_string(), vec);
            }

            let acuity_measurements = if r.random::<f64>() < config.unmeasured_rate {
                Vec::new()
            } else {
                let mut m = vec![logmar_to_snellen(logmar)];
                if r.random::<f64>() < 0.5 {
                    let worse = logmar + r.random_range(0.1..0.6);
                    m.push(if worse > 1.9 { "CF".to_string() } else { logmar_to_snellen(worse) });
                }
                m.shuffle(&mut r);
                m
            };
            encounters.push(RawEncounter {
                patient_id: patient_id.clone(),
                encounter_date: date.format("%Y-%m-%d").to_string(),
                age: Some(((age0 + years) * 10.0).round() / 10.0),
                sex: Some(sex.to_string()),
                race: Some(race.to_string()),
                ethnicity: Some(ethnicity.to_string()),
                embedded_fields,
                acuity_measurements,
            });
        }
        labels.push(CohortLabel {
            patient_id,
            archetype: arch,
        });
    }
    Ok(SyntheticCohort { encounters, labels })
}
