use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("ontology level counts must satisfy 0 < typing <= category <= unique, got {typing}/{category}/{unique}")]
    NonMonotoneOntology {
        typing: usize,
        category: usize,
        unique: usize,
    },
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: malformed header: {msg}")]
    MalformedHeader { line: usize, msg: String },
    #[error("line {line}: malformed record: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("line {line}: patient {patient_id}: code id {code} out of range (unique_count {unique_count})")]
    CodeOutOfRange {
        line: usize,
        patient_id: usize,
        code: usize,
        unique_count: usize,
    },
    #[error("line {line}: patient {patient_id}: invalid record: {msg}")]
    InvalidRecord {
        line: usize,
        patient_id: usize,
        msg: String,
    },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("cannot split {n} patients into 3 nonempty parts")]
    TooFewPatients { n: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-visit modality presence flags, ordered (demographics, note, codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presence {
    pub demo: bool,
    pub note: bool,
    pub codes: bool,
}

impl Presence {
    pub const ALL: Presence = Presence {
        demo: true,
        note: true,
        codes: true,
    };

    pub fn any(self) -> bool {
        self.demo || self.note || self.codes
    }

    pub fn all(self) -> bool {
        self.demo && self.note && self.codes
    }

    /// Pattern id in 1..=7: bit 2 = demo, bit 1 = note, bit 0 = codes.
    /// 0 (all-missing) never occurs in a valid visit.
    pub fn pattern_id(self) -> usize {
        ((self.demo as usize) << 2) | ((self.note as usize) << 1) | (self.codes as usize)
    }

    pub fn from_pattern_id(id: usize) -> Presence {
        Presence {
            demo: id & 4 != 0,
            note: id & 2 != 0,
            codes: id & 1 != 0,
        }
    }

    /// Compact label like "D+N-C+".
    pub fn label(self) -> String {
        format!(
            "D{}N{}C{}",
            if self.demo { '+' } else { '-' },
            if self.note { '+' } else { '-' },
            if self.codes { '+' } else { '-' }
        )
    }
}

/// One admission: demographics, a note token sequence, and a set of unique
/// diagnosis codes, plus which of the three are present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    /// One categorical index per demographic field.
    pub demographics: Vec<usize>,
    /// Note token ids, at most `max_note_len` long.
    pub note: Vec<usize>,
    /// Sorted set of unique-code ids.
    pub codes: Vec<usize>,
    pub present: Presence,
}

impl Visit {
    pub fn validate(&self, config: &DatasetConfig) -> Result<(), String> {
        if !self.present.any() {
            return Err("all-missing visit".into());
        }
        if self.present.codes && self.codes.is_empty() {
            return Err("codes flagged present but empty".into());
        }
        if let Some(&c) = self.codes.iter().find(|&&c| c >= config.unique_count) {
            return Err(format!("code id {c} >= unique_count {}", config.unique_count));
        }
        if self.demographics.len() != config.demo_cardinalities.len() {
            return Err(format!(
                "expected {} demographic fields, got {}",
                config.demo_cardinalities.len(),
                self.demographics.len()
            ));
        }
        for (f, (&v, &card)) in self
            .demographics
            .iter()
            .zip(&config.demo_cardinalities)
            .enumerate()
        {
            if v >= card {
                return Err(format!("demographic field {f} value {v} >= cardinality {card}"));
            }
        }
        if self.note.len() > config.max_note_len {
            return Err(format!(
                "note length {} > max {}",
                self.note.len(),
                config.max_note_len
            ));
        }
        if let Some(&t) = self.note.iter().find(|&&t| t >= config.note_vocab) {
            return Err(format!("note token {t} >= vocab {}", config.note_vocab));
        }
        Ok(())
    }
}

/// A patient: at least two visits (history plus one prediction target).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: usize,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Visits the model may consume: all but the last.
    pub fn input_visits(&self) -> &[Visit] {
        &self.visits[..self.visits.len() - 1]
    }

    /// The prediction target visit (the last one).
    pub fn target_visit(&self) -> &Visit {
        self.visits.last().expect("record has visits")
    }
}

/// Shape and scale of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub typing_count: usize,
    pub category_count: usize,
    pub unique_count: usize,
    /// Cardinality of each demographic field.
    pub demo_cardinalities: Vec<usize>,
    pub note_vocab: usize,
    pub max_note_len: usize,
    pub max_visits: usize,
    pub patient_count: usize,
    /// Strength of the first-order category dynamics; 0 means uniform
    /// (unlearnable) transitions.
    pub transition_sharpness: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        // Desk-scale mirror of the reference cohort at roughly 1/20.
        DatasetConfig {
            typing_count: 5,
            category_count: 25,
            unique_count: 200,
            demo_cardinalities: vec![2, 9, 5],
            note_vocab: 256,
            max_note_len: 24,
            max_visits: 8,
            patient_count: 2000,
            transition_sharpness: 3.5,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    /// Sentinel unique-code id for a missing code set: one past the last
    /// valid id.
    pub fn code_sentinel(&self) -> usize {
        self.unique_count
    }

    /// Sentinel note token id (UNK).
    pub fn unk_token(&self) -> usize {
        self.note_vocab
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.typing_count == 0
            || self.typing_count > self.category_count
            || self.category_count > self.unique_count
        {
            return Err(DataError::NonMonotoneOntology {
                typing: self.typing_count,
                category: self.category_count,
                unique: self.unique_count,
            });
        }
        if self.demo_cardinalities.is_empty() || self.demo_cardinalities.iter().any(|&c| c == 0) {
            return Err(DataError::InvalidConfig(
                "demo_cardinalities must be nonempty and positive".into(),
            ));
        }
        if self.note_vocab == 0 || self.max_note_len == 0 {
            return Err(DataError::InvalidConfig(
                "note_vocab and max_note_len must be positive".into(),
            ));
        }
        if self.max_visits < 2 {
            return Err(DataError::InvalidConfig("max_visits must be >= 2".into()));
        }
        if self.patient_count == 0 {
            return Err(DataError::InvalidConfig("patient_count must be positive".into()));
        }
        if !self.transition_sharpness.is_finite() || self.transition_sharpness < 0.0 {
            return Err(DataError::InvalidConfig(
                "transition_sharpness must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}
