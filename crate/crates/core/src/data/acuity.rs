use serde::{Deserialize, Serialize};

use crate::data::DataError;

/// logMAR values assigned to the categorical acuity codes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcuityCodes {
    pub cf: f64,
    pub hm: f64,
    pub lp: f64,
    pub nlp: f64,
}

impl Default for AcuityCodes {
    fn default() -> Self {
        Self {
            cf: 1.9,
            hm: 2.3,
            lp: 2.7,
            nlp: 3.0,
        }
    }
}

impl AcuityCodes {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [("cf", self.cf), ("hm", self.hm), ("lp", self.lp), ("nlp", self.nlp)] {
            if !v.is_finite() {
                return Err(DataError::Invalid(format!("acuity code {name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Entries treated as "not measured".
const MISSING_MARKERS: [&str; 5] = ["", "NA", "N/A", "-1", "NULL"];

/// Parses one acuity entry. Snellen fractions `N/D` map to `log10(D/N)`,
/// the four categorical codes to their configured constants and missing
/// markers to `None`.
pub fn snellen_to_logmar(entry: &str, codes: &AcuityCodes) -> Result<Option<f64>, DataError> {
    let s = entry.trim();
    let upper = s.to_ascii_uppercase();
    if MISSING_MARKERS.contains(&upper.as_str()) {
        return Ok(None);
    }
    match upper.as_str() {
        "CF" => return Ok(Some(codes.cf)),
        "HM" => return Ok(Some(codes.hm)),
        "LP" => return Ok(Some(codes.lp)),
        "NLP" => return Ok(Some(codes.nlp)),
        _ => {}
    }
    let bad = || DataError::Acuity(entry.to_string());
    let (n, d) = s.split_once('/').ok_or_else(bad)?;
    let n: u32 = n.trim().parse().map_err(|_| bad())?;
    let d: u32 = d.trim().parse().map_err(|_| bad())?;
    if n == 0 || d == 0 {
        return Err(bad());
    }
    Ok(Some((d as f64 / n as f64).log10()))
}

/// Best acuity of an encounter: the minimum logMAR, or `None` when nothing
/// was measured.
pub fn aggregate_acuity(measurements: &[f64]) -> Option<f64> {
    measurements.iter().copied().reduce(f64::min)
}

/// Closest `20/D` notation for a logMAR value, with `D` rounded to an integer.
pub fn logmar_to_snellen(logmar: f64) -> String {
    let d = (20.0 * 10f64.powf(logmar)).round().max(1.0) as u32;
    format!("20/{d}")
}
