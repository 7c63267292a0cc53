use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CohortLabel, DataError, FeatureLayout, NormalizationStats, PatientSequence, SplitDataset, SplitIds};

/// Paths written for a preprocessed dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub layout: PathBuf,
    pub stats: PathBuf,
    pub splits: Vec<PathBuf>,
    pub shards: Vec<PathBuf>,
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path).map(BufWriter::new).map_err(|e| DataError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|e| DataError::io(path, e))
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), DataError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| DataError::Invalid(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| DataError::io(path, e))
}

fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V, DataError> {
    serde_json::from_reader(open(path)?).map_err(|e| DataError::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Writes the layout, normalization statistics, one id list per split and
/// one JSON-lines shard of encoded sequences per split.
pub fn write_dataset(dir: &Path, data: &SplitDataset) -> Result<DatasetFiles, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let layout = dir.join("layout.json");
    write_json(&layout, &data.layout)?;
    let stats = dir.join("normalization.json");
    write_json(&stats, &data.stats)?;
    let mut splits = Vec::new();
    let mut shards = Vec::new();
    for (name, ids, seqs) in [
        (SPLITS[0], &data.ids.train, &data.train),
        (SPLITS[1], &data.ids.val, &data.val),
        (SPLITS[2], &data.ids.test, &data.test),
    ] {
        let path = dir.join(format!("{name}_ids.txt"));
        let mut w = create(&path)?;
        for id in ids {
            writeln!(w, "{id}").map_err(|e| DataError::io(&path, e))?;
        }
        w.flush().map_err(|e| DataError::io(&path, e))?;
        splits.push(path);

        let path = dir.join(format!("{name}.jsonl"));
        let mut w = create(&path)?;
        for seq in seqs {
            serde_json::to_writer(&mut w, seq).map_err(|e| DataError::Invalid(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| DataError::io(&path, e))?;
        }
        w.flush().map_err(|e| DataError::io(&path, e))?;
        shards.push(path);
    }
    Ok(DatasetFiles {
        layout,
        stats,
        splits,
        shards,
    })
}

fn read_ids(path: &Path) -> Result<Vec<String>, DataError> {
    open(path)?
        .lines()
        .map(|l| l.map_err(|e| DataError::io(path, e)))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect()
}

fn read_shard(path: &Path) -> Result<Vec<PatientSequence>, DataError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<SplitDataset, DataError> {
    let layout: FeatureLayout = read_json(&dir.join("layout.json"))?;
    let stats: NormalizationStats = read_json(&dir.join("normalization.json"))?;
    let ids = SplitIds {
        train: read_ids(&dir.join("train_ids.txt"))?,
        val: read_ids(&dir.join("val_ids.txt"))?,
        test: read_ids(&dir.join("test_ids.txt"))?,
    };
    let data = SplitDataset {
        layout,
        stats,
        train: read_shard(&dir.join("train.jsonl"))?,
        val: read_shard(&dir.join("val.jsonl"))?,
        test: read_shard(&dir.join("test.jsonl"))?,
        ids,
    };
    for (name, ids, seqs) in [
        ("train", &data.ids.train, &data.train),
        ("val", &data.ids.val, &data.val),
        ("test", &data.ids.test, &data.test),
    ] {
        if ids.len() != seqs.len() || ids.iter().zip(seqs.iter()).any(|(a, s)| a != &s.patient_id) {
            return Err(DataError::Invalid(format!("{name} shard does not match its id list")));
        }
        if seqs.iter().flat_map(|s| &s.records).any(|r| r.features.len() != layout.dim()) {
            return Err(DataError::Invalid(format!("{name} shard has records of the wrong width")));
        }
    }
    Ok(data)
}

/// Ground-truth labels as CSV with a `patient_id,archetype` header.
pub fn write_labels(writer: impl Write, labels: &[CohortLabel]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    for l in labels {
        w.serialize(l).map_err(|e| DataError::Invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Invalid(e.to_string()))
}

pub fn read_labels(reader: impl std::io::Read) -> Result<Vec<CohortLabel>, DataError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| DataError::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
