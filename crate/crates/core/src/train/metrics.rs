use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// One line of the metrics stream. The component keys are always present
/// (null when not applicable) so downstream tooling can rely on the schema;
/// `label` and `spec` ride along on the run's meta record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: Option<usize>,
    pub split: String,
    pub top10: Option<f64>,
    pub top20: Option<f64>,
    pub mwcd: Option<f64>,
    pub mwhd: Option<f64>,
    pub tr2d: Option<f64>,
    pub magd: Option<f64>,
    pub dual_ld: Option<f64>,
    pub dual_ce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<[f64; 3]>,
}

impl MetricsRecord {
    pub fn blank(split: &str) -> MetricsRecord {
        MetricsRecord {
            epoch: None,
            split: split.to_string(),
            top10: None,
            top20: None,
            mwcd: None,
            mwhd: None,
            tr2d: None,
            magd: None,
            dual_ld: None,
            dual_ce: None,
            label: None,
            spec: None,
        }
    }

    pub fn meta(label: &str, spec: Option<[f64; 3]>) -> MetricsRecord {
        MetricsRecord {
            label: Some(label.to_string()),
            spec,
            ..MetricsRecord::blank("meta")
        }
    }
}

pub fn append_records(path: &Path, records: &[MetricsRecord]) -> Result<(), TrainError> {
    let mut out = OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| TrainError::Metrics(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>, TrainError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| TrainError::Metrics(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
