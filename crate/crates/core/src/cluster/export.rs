use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterError, TrajectoryProfile};

/// Mean and spread of one profile channel within one cluster at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummaryRow {
    pub cluster: usize,
    pub grid_index: usize,
    pub time: f64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Per-cluster mean and standard deviation of channel `channel` over the grid.
pub fn cluster_summaries(profiles: &[TrajectoryProfile], labels: &[usize], channel: usize) -> Vec<ClusterSummaryRow> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let g = profiles.first().map_or(0, |p| p.grid);
    let mut rows = Vec::with_capacity(k * g);
    for c in 0..k {
        let members: Vec<&TrajectoryProfile> =
            profiles.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        for i in 0..g {
            let vals: Vec<f64> = members.iter().map(|p| p.channel(channel)[i]).collect();
            let n = vals.len();
            let mean = if n == 0 { 0.0 } else { vals.iter().sum::<f64>() / n as f64 };
            let var = if n == 0 { 0.0 } else { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64 };
            rows.push(ClusterSummaryRow {
                cluster: c,
                grid_index: i,
                time: if g == 1 { 0.0 } else { i as f64 / (g - 1) as f64 },
                n,
                mean,
                std: var.sqrt(),
            });
        }
    }
    rows
}

fn csv_err(e: impl std::fmt::Display) -> ClusterError {
    ClusterError::Invalid(format!("csv output failed: {e}"))
}

/// `patient_id,cluster` rows.
pub fn write_assignments(writer: impl Write, patient_ids: &[String], labels: &[usize]) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "cluster"]).map_err(csv_err)?;
    for (id, l) in patient_ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn write_summaries(writer: impl Write, rows: &[ClusterSummaryRow]) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}
