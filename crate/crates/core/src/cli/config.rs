use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ehr::DatasetConfig;
use crate::distill::LossWeights;
use crate::missingness::CurriculumSchedule;
use crate::model::{FusionVariant, ModelConfig};
use crate::train::TrainConfig;

use super::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SDPKD_OUT_DIR";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Architectural knobs exposed in run configs; vocabulary sizes always come
/// from the dataset header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub attention_heads: usize,
    pub transformer_layers: usize,
    pub note_layers: usize,
    pub note_dim: usize,
    pub note_heads: usize,
    pub ff_multiplier: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 128,
            dropout: 0.1,
            attention_heads: 4,
            transformer_layers: 3,
            note_layers: 2,
            note_dim: 64,
            note_heads: 2,
            ff_multiplier: 2,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, data: &DatasetConfig, fusion: FusionVariant) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            attention_heads: self.attention_heads,
            transformer_layers: self.transformer_layers,
            note_layers: self.note_layers,
            note_dim: self.note_dim,
            note_heads: self.note_heads,
            ff_multiplier: self.ff_multiplier,
            ..ModelConfig::for_dataset(data, fusion)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 1,
        }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> (f64, f64, f64) {
        (self.train, self.valid, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub dataset: DatasetConfig,
    /// Output path; resolved against the output directory when relative.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainTeacherConfig {
    pub data: PathBuf,
    pub label: String,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub schedule: CurriculumSchedule,
    pub split: SplitSection,
}

impl Default for TrainTeacherConfig {
    fn default() -> Self {
        TrainTeacherConfig {
            data: PathBuf::from("dataset.jsonl"),
            label: "teacher".to_string(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            schedule: CurriculumSchedule::default(),
            split: SplitSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub data: PathBuf,
    pub teacher: PathBuf,
    /// Empty label derives one from the ablation toggles.
    pub label: String,
    /// Missingness triple in the table convention "(p_D, p_N, p_C)".
    pub spec: String,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub schedule: CurriculumSchedule,
    pub split: SplitSection,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            data: PathBuf::from("dataset.jsonl"),
            teacher: PathBuf::from("teacher.ckpt"),
            label: String::new(),
            spec: "(0.5, 0.5, 0.5)".to_string(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            schedule: CurriculumSchedule::default(),
            split: SplitSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub spec: String,
    pub seed: u64,
    pub split: SplitSection,
    /// Which split part to evaluate: train, valid, test, or all.
    pub part: String,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            checkpoint: PathBuf::from("student.ckpt"),
            data: PathBuf::from("dataset.jsonl"),
            spec: "(0.5, 0.5, 0.5)".to_string(),
            seed: 0,
            split: SplitSection::default(),
            part: "test".to_string(),
        }
    }
}

/// Read a TOML config, rejecting unknown keys by construction of the serde
/// structures. A missing path with `required = false` yields the defaults.
pub fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })?;
            toml::from_str(&text).map_err(|e| CliError::Config {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })
        }
    }
}

pub fn render_config<T: Serialize>(config: &T) -> Result<String, CliError> {
    toml::to_string_pretty(config).map_err(|e| CliError::Render(e.to_string()))
}

pub fn resolve_out(path: &Path, out_dir: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_dir.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_published_values() {
        let cfg = DistillConfig::default();
        assert_eq!(cfg.model.hidden_dim, 128);
        assert_eq!(cfg.model.dropout, 0.1);
        assert_eq!(cfg.model.attention_heads, 4);
        assert_eq!(cfg.model.transformer_layers, 3);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.max_epochs, 100);
        assert_eq!(cfg.train.patience, 5);
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.train.note_learning_rate, 2e-5);
        assert_eq!(cfg.weights.lambda_tr2d, 0.1);
        assert_eq!(cfg.weights.hrchy_weight, 0.1);
        assert_eq!(cfg.weights.tau, 0.1);
        assert_eq!(cfg.weights.alpha, 0.25);
        assert_eq!(cfg.schedule.e1, 5);
        assert_eq!(cfg.schedule.e2, 10);
    }

    #[test]
    fn print_config_round_trips_losslessly() {
        let cfg = DistillConfig::default();
        let text = render_config(&cfg).unwrap();
        let back: DistillConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);

        let gen = GenDataConfig::default();
        let text = render_config(&gen).unwrap();
        let back: GenDataConfig = toml::from_str(&text).unwrap();
        assert_eq!(gen, back);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = "unknown_knob = 3\n";
        let err = toml::from_str::<GenDataConfig>(text).unwrap_err();
        assert!(err.to_string().contains("unknown_knob"));

        let nested = "[dataset]\npatient_count = 5\nbogus = 1\n";
        let err = toml::from_str::<GenDataConfig>(nested).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }
}
