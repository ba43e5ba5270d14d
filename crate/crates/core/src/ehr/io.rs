use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::types::{DataError, DatasetConfig, PatientRecord};

/// Self-describing header written as the first line of a dataset stream.
///
/// `code_sentinel` records the missing-code convention (one past the last
/// valid id) so an external adapter can override it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
    pub code_sentinel: usize,
}

/// A deserialized dataset: header plus one record per line.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub records: Vec<PatientRecord>,
}

const FORMAT: &str = "sdpkd-ehr";
const VERSION: u32 = 1;

/// Line-delimited serialization: header line, then one patient per line.
pub fn serialize_dataset<W: Write>(
    records: &[PatientRecord],
    config: &DatasetConfig,
    out: &mut W,
) -> Result<(), DataError> {
    let header = DatasetHeader {
        format: FORMAT.to_string(),
        version: VERSION,
        config: config.clone(),
        code_sentinel: config.code_sentinel(),
    };
    let line = serde_json::to_string(&header)
        .map_err(|e| DataError::InvalidConfig(format!("header serialization: {e}")))?;
    writeln!(out, "{line}")?;
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| DataError::InvalidConfig(format!("record serialization: {e}")))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn deserialize_dataset<R: BufRead>(input: R) -> Result<DatasetFile, DataError> {
    let mut lines = input.lines();
    let header_line = lines
        .next()
        .ok_or(DataError::MalformedHeader {
            line: 1,
            msg: "empty stream".into(),
        })??;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| DataError::MalformedHeader {
            line: 1,
            msg: e.to_string(),
        })?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(DataError::MalformedHeader {
            line: 1,
            msg: format!(
                "expected format {FORMAT} v{VERSION}, got {} v{}",
                header.format, header.version
            ),
        });
    }
    header.config.validate()?;

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            return Err(DataError::MalformedLine {
                line: line_no,
                msg: "blank line (truncated stream?)".into(),
            });
        }
        let record: PatientRecord =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
                line: line_no,
                msg: e.to_string(),
            })?;
        if record.visits.len() < 2 {
            return Err(DataError::InvalidRecord {
                line: line_no,
                patient_id: record.patient_id,
                msg: format!("{} visits, need at least 2", record.visits.len()),
            });
        }
        for v in &record.visits {
            if let Some(&c) = v.codes.iter().find(|&&c| c >= header.config.unique_count) {
                return Err(DataError::CodeOutOfRange {
                    line: line_no,
                    patient_id: record.patient_id,
                    code: c,
                    unique_count: header.config.unique_count,
                });
            }
            v.validate(&header.config)
                .map_err(|msg| DataError::InvalidRecord {
                    line: line_no,
                    patient_id: record.patient_id,
                    msg,
                })?;
        }
        records.push(record);
    }
    Ok(DatasetFile { header, records })
}
