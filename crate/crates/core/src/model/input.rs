use crate::ehr::{encode_missing, DatasetConfig, EncodedVisit, Ontology, PatientRecord, Presence};
use crate::tensor::Arr;

/// One record ready for the network: sentinel-encoded input visits plus the
/// next-visit targets at both prediction levels.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub patient_id: usize,
    pub inputs: Vec<EncodedVisit>,
    /// Category set of the target visit (sorted, deduplicated).
    pub target_categories: Vec<usize>,
    /// Typing set of the target visit.
    pub target_typings: Vec<usize>,
    /// Presence pattern of the last input visit; evaluation groups by it.
    pub last_input_pattern: Presence,
}

pub fn prepare_record(
    record: &PatientRecord,
    ontology: &Ontology,
    config: &DatasetConfig,
) -> PreparedRecord {
    assert!(record.visits.len() >= 2, "record needs an input and a target visit");
    let inputs: Vec<EncodedVisit> = record
        .input_visits()
        .iter()
        .map(|v| encode_missing(v, config))
        .collect();
    let target = record.target_visit();
    let last_input_pattern = inputs.last().expect("at least one input").present;
    PreparedRecord {
        patient_id: record.patient_id,
        inputs,
        target_categories: ontology.categories_of(&target.codes),
        target_typings: ontology.typings_of(&target.codes),
        last_input_pattern,
    }
}

/// `[1, len]` multi-hot row.
pub fn multi_hot(indices: &[usize], len: usize) -> Arr {
    let mut row = Arr::zeros((1, len));
    for &i in indices {
        row[(0, i)] = 1.0;
    }
    row
}
