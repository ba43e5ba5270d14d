use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig};
use crate::tensor::Arr;

use super::TrainError;

const MAGIC: &str = "SDPKDCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    magic: String,
    model_config: ModelConfig,
    frozen: bool,
    params: Vec<ParamMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
}

/// Named-array archive: one JSON header line, then raw little-endian f64
/// data in header order. Teacher checkpoints carry `frozen = true`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub frozen: bool,
    pub params: Vec<(String, Arr)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, frozen: bool) -> Checkpoint {
        Checkpoint {
            model_config: model.config.clone(),
            frozen,
            params: model
                .params
                .iter()
                .map(|(n, a)| (n.to_string(), a.clone()))
                .collect(),
        }
    }

    /// Rebuild a runnable model: instantiate from the stored config, then
    /// overwrite every parameter from the archive.
    pub fn into_model(&self) -> Result<Model, TrainError> {
        let mut model = Model::new(self.model_config.clone(), 0)?;
        if model.params.len() != self.params.len() {
            return Err(TrainError::CheckpointMismatch(format!(
                "expected {} parameters, archive has {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for (name, arr) in &self.params {
            let idx = model.params.index_of(name).ok_or_else(|| {
                TrainError::CheckpointMismatch(format!("unknown parameter {name}"))
            })?;
            if model.params.value(idx).dim() != arr.dim() {
                return Err(TrainError::CheckpointMismatch(format!(
                    "parameter {name}: expected {:?}, archive has {:?}",
                    model.params.value(idx).dim(),
                    arr.dim()
                )));
            }
            model.params.value_mut(idx).assign(arr);
        }
        Ok(model)
    }

    /// FNV-1a digest over names, shapes, and exact parameter bits.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        };
        for (name, arr) in &self.params {
            eat(name.as_bytes());
            eat(&(arr.nrows() as u64).to_le_bytes());
            eat(&(arr.ncols() as u64).to_le_bytes());
            for &x in arr.iter() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = CheckpointHeader {
            magic: MAGIC.to_string(),
            model_config: self.model_config.clone(),
            frozen: self.frozen,
            params: self
                .params
                .iter()
                .map(|(n, a)| ParamMeta {
                    name: n.clone(),
                    rows: a.nrows(),
                    cols: a.ncols(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&header)
            .map_err(|e| TrainError::CheckpointMismatch(e.to_string()))?;
        writeln!(out, "{line}")?;
        for (_, arr) in &self.params {
            for &x in arr.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TrainError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())
            .map_err(|e| TrainError::CheckpointMismatch(format!("bad header: {e}")))?;
        if header.magic != MAGIC {
            return Err(TrainError::CheckpointMismatch(format!(
                "bad magic {:?}",
                header.magic
            )));
        }
        let mut params = Vec::with_capacity(header.params.len());
        for meta in &header.params {
            let n = meta.rows * meta.cols;
            let mut buf = vec![0u8; n * 8];
            reader.read_exact(&mut buf).map_err(|_| {
                TrainError::CheckpointMismatch(format!("truncated data for {}", meta.name))
            })?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let arr = Arr::from_shape_vec((meta.rows, meta.cols), data)
                .map_err(|e| TrainError::CheckpointMismatch(e.to_string()))?;
            params.push((meta.name.clone(), arr));
        }
        Ok(Checkpoint {
            model_config: header.model_config,
            frozen: header.frozen,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::DatasetConfig;
    use crate::model::FusionVariant;

    fn tiny_model() -> Model {
        let data = DatasetConfig {
            typing_count: 2,
            category_count: 4,
            unique_count: 8,
            demo_cardinalities: vec![2],
            note_vocab: 10,
            max_note_len: 4,
            max_visits: 3,
            patient_count: 1,
            ..DatasetConfig::default()
        };
        let cfg = ModelConfig {
            hidden_dim: 8,
            attention_heads: 2,
            transformer_layers: 1,
            note_layers: 1,
            note_dim: 4,
            note_heads: 1,
            ..ModelConfig::for_dataset(&data, FusionVariant::Cmag)
        };
        Model::new(cfg, 1).unwrap()
    }

    #[test]
    fn round_trip_preserves_digest_and_flag() {
        let model = tiny_model();
        let ckpt = Checkpoint::from_model(&model, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert!(loaded.frozen);
        assert_eq!(ckpt.digest(), loaded.digest());
        let rebuilt = loaded.into_model().unwrap();
        assert_eq!(rebuilt.params.digest(), model.params.digest());
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(Checkpoint::load(&path).is_err());

        let model = tiny_model();
        let ckpt = Checkpoint::from_model(&model, false);
        let path2 = dir.path().join("trunc.ckpt");
        ckpt.save(&path2).unwrap();
        let bytes = std::fs::read(&path2).unwrap();
        std::fs::write(&path2, &bytes[..bytes.len() - 16]).unwrap();
        assert!(Checkpoint::load(&path2).is_err());
    }
}
