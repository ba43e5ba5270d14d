use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::DatasetConfig;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("hidden_dim {hidden} not divisible by {heads} attention heads")]
    HeadsMismatch { hidden: usize, heads: usize },
    #[error("note_dim {dim} not divisible by {heads} note-encoder heads")]
    NoteHeadsMismatch { dim: usize, heads: usize },
    #[error("forward requires at least one input visit")]
    EmptyInput,
    #[error("record has {got} input visits but the model was built for at most {max}")]
    TooManyVisits { got: usize, max: usize },
    #[error("visit {visit}: demographic field {field} id {id} exceeds sentinel {sentinel}")]
    DemoOutOfRange {
        visit: usize,
        field: usize,
        id: usize,
        sentinel: usize,
    },
    #[error("visit {visit}: empty note sequence")]
    EmptyNote { visit: usize },
    #[error("visit {visit}: note token {id} exceeds UNK id {unk}")]
    TokenOutOfRange { visit: usize, id: usize, unk: usize },
    #[error("visit {visit}: empty code set")]
    EmptyCodes { visit: usize },
    #[error("visit {visit}: code id {id} exceeds sentinel {sentinel}")]
    CodeOutOfRange {
        visit: usize,
        id: usize,
        sentinel: usize,
    },
    #[error("note length {got} exceeds the configured maximum {max}")]
    NoteTooLong { got: usize, max: usize },
    #[error("config invalid: {0}")]
    Invalid(String),
}

/// Which fusion gate closes the network: the teacher anchors on the code
/// stream, the student lets dominance float.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionVariant {
    Cmag,
    Mag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub attention_heads: usize,
    pub transformer_layers: usize,
    pub fusion: FusionVariant,
    /// Small trainable note encoder standing in for a pretrained clinical
    /// language model; same interface, its own width and depth.
    pub note_layers: usize,
    pub note_dim: usize,
    pub note_heads: usize,
    /// Feed-forward width as a multiple of the stream width.
    pub ff_multiplier: usize,
    // vocabulary sizes, copied from the dataset config
    pub typing_count: usize,
    pub category_count: usize,
    pub unique_count: usize,
    pub demo_cardinalities: Vec<usize>,
    pub note_vocab: usize,
    pub max_note_len: usize,
    pub max_visits: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_dataset(&DatasetConfig::default(), FusionVariant::Cmag)
    }
}

impl ModelConfig {
    pub fn for_dataset(data: &DatasetConfig, fusion: FusionVariant) -> ModelConfig {
        ModelConfig {
            hidden_dim: 128,
            dropout: 0.1,
            attention_heads: 4,
            transformer_layers: 3,
            fusion,
            note_layers: 2,
            note_dim: 64,
            note_heads: 2,
            ff_multiplier: 2,
            typing_count: data.typing_count,
            category_count: data.category_count,
            unique_count: data.unique_count,
            demo_cardinalities: data.demo_cardinalities.clone(),
            note_vocab: data.note_vocab,
            max_note_len: data.max_note_len,
            max_visits: data.max_visits,
        }
    }

    /// Teacher configuration: CMAG fusion.
    pub fn teacher(data: &DatasetConfig) -> ModelConfig {
        Self::for_dataset(data, FusionVariant::Cmag)
    }

    /// Student configuration: MAG fusion.
    pub fn student(data: &DatasetConfig) -> ModelConfig {
        Self::for_dataset(data, FusionVariant::Mag)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.attention_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 || self.hidden_dim % self.attention_heads != 0 {
            return Err(ModelError::HeadsMismatch {
                hidden: self.hidden_dim,
                heads: self.attention_heads,
            });
        }
        if self.note_dim == 0 || self.note_dim % self.note_heads != 0 {
            return Err(ModelError::NoteHeadsMismatch {
                dim: self.note_dim,
                heads: self.note_heads,
            });
        }
        if self.transformer_layers == 0 || self.note_layers == 0 || self.ff_multiplier == 0 {
            return Err(ModelError::Invalid("layer counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.typing_count == 0
            || self.category_count == 0
            || self.unique_count == 0
            || self.note_vocab == 0
            || self.max_note_len == 0
            || self.max_visits == 0
            || self.demo_cardinalities.is_empty()
        {
            return Err(ModelError::Invalid("vocabulary sizes must be positive".into()));
        }
        Ok(())
    }
}
