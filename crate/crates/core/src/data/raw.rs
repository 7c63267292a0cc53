use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::DataError;

/// One encounter as it arrives from the extraction job. Text fields carry
/// precomputed embedding vectors keyed by field name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEncounter {
    pub patient_id: String,
    /// `YYYY-MM-DD`, optionally with a time of day.
    pub encounter_date: String,
    /// Years; `None` or the ingestion sentinel `-1` when unknown.
    #[serde(default)]
    pub age: Option<f64>,
    #[serde(default)]
    pub sex: Option<String>,
    #[serde(default)]
    pub race: Option<String>,
    #[serde(default)]
    pub ethnicity: Option<String>,
    #[serde(default)]
    pub embedded_fields: BTreeMap<String, Vec<f64>>,
    /// Snellen fractions, categorical codes or missing markers.
    #[serde(default)]
    pub acuity_measurements: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ingested {
    pub encounters: Vec<RawEncounter>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads JSON-lines encounters. Blank lines are ignored; lines that fail to
/// parse are skipped and reported with their 1-based line number.
pub fn read_jsonl(reader: impl BufRead) -> Result<Ingested, DataError> {
    let mut out = Ingested::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawEncounter>(&line) {
            Ok(enc) => out.encounters.push(enc),
            Err(e) => out.skipped.push(SkippedLine {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn write_jsonl(mut writer: impl Write, encounters: &[RawEncounter]) -> std::io::Result<()> {
    for enc in encounters {
        serde_json::to_writer(&mut writer, enc)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[derive(Deserialize)]
struct CsvRow {
    patient_id: String,
    encounter_date: String,
    #[serde(default)]
    age: Option<f64>,
    #[serde(default)]
    sex: Option<String>,
    #[serde(default)]
    race: Option<String>,
    #[serde(default)]
    ethnicity: Option<String>,
    /// Measurements separated by `;`.
    #[serde(default)]
    acuity: String,
}

/// Reads the targets-only CSV variant: a header row with `patient_id`,
/// `encounter_date`, `age`, `sex`, `race`, `ethnicity` and `acuity`, where
/// `acuity` lists measurements separated by `;`. No embeddings are present.
pub fn read_csv(reader: impl std::io::Read) -> Result<Ingested, DataError> {
    let mut out = Ingested::default();
    let mut rdr = csv::Reader::from_reader(reader);
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        match row {
            Ok(r) => out.encounters.push(RawEncounter {
                patient_id: r.patient_id,
                encounter_date: r.encounter_date,
                age: r.age,
                sex: r.sex.filter(|s| !s.is_empty()),
                race: r.race.filter(|s| !s.is_empty()),
                ethnicity: r.ethnicity.filter(|s| !s.is_empty()),
                embedded_fields: BTreeMap::new(),
                acuity_measurements: r
                    .acuity
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
            }),
            Err(e) => out.skipped.push(SkippedLine {
                line: i + 2,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}
