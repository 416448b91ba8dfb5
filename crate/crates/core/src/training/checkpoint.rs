use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::models::{ModelConfig, ModelParams, Variant};
use crate::numerics::Tensor;

use super::{write_atomic, TrainingError};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMetadata {
    pub seed: u64,
    /// Epochs completed.
    pub epochs: usize,
    /// Validation MAE after the final epoch; null without a validation split.
    pub valid_mae: Option<f64>,
}

/// A trained weak learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub metadata: CheckpointMetadata,
}

#[derive(Serialize)]
struct TensorOut<'a> {
    shape: &'a [usize],
    data: &'a [f64],
}

#[derive(Serialize)]
struct FileOut<'a> {
    format_version: u64,
    variant: Variant,
    config: &'a ModelConfig,
    metadata: &'a CheckpointMetadata,
    tensors: BTreeMap<&'a str, TensorOut<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorIn {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn malformed(what: &str, e: impl std::fmt::Display) -> TrainingError {
    TrainingError::IoError(format!("malformed checkpoint {what}: {e}"))
}

impl Checkpoint {
    /// The JSON document; identical checkpoints give identical bytes.
    pub fn to_json(&self) -> Result<String, TrainingError> {
        let mut tensors = BTreeMap::new();
        for (name, t) in self.params.tensors.iter().chain(&self.params.buffers) {
            if !t.is_finite() {
                return Err(TrainingError::CorruptTensor(name.clone()));
            }
            tensors.insert(
                name.as_str(),
                TensorOut {
                    shape: t.shape(),
                    data: t.data(),
                },
            );
        }
        let doc = FileOut {
            format_version: FORMAT_VERSION,
            variant: self.config.variant,
            config: &self.config,
            metadata: &self.metadata,
            tensors,
        };
        serde_json::to_string(&doc).map_err(|e| malformed("document", e))
    }

    /// Parses a checkpoint, optionally insisting on a variant.
    ///
    /// Every tensor the config implies must be present with its expected shape.
    pub fn from_json(text: &str, expected: Option<Variant>) -> Result<Self, TrainingError> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| malformed("document", e))?;
        let version = doc.get("format_version").and_then(Value::as_u64);
        if version != Some(FORMAT_VERSION) {
            return Err(TrainingError::VersionMismatch {
                expected: format!("format_version {FORMAT_VERSION}"),
                found: doc
                    .get("format_version")
                    .map_or("none".to_string(), |v| format!("format_version {v}")),
            });
        }
        let variant: Variant = serde_json::from_value(doc["variant"].take())
            .map_err(|e| malformed("variant", e))?;
        let config: ModelConfig = serde_json::from_value(doc["config"].take())
            .map_err(|e| malformed("config", e))?;
        let mismatch = |expected: Variant, found: Variant| TrainingError::VersionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        };
        if config.variant != variant {
            return Err(mismatch(variant, config.variant));
        }
        if let Some(expected) = expected {
            if expected != variant {
                return Err(mismatch(expected, variant));
            }
        }
        let metadata: CheckpointMetadata = serde_json::from_value(doc["metadata"].take())
            .map_err(|e| malformed("metadata", e))?;

        let template = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(TrainingError::Model)?;
        let Value::Object(mut records) = doc["tensors"].take() else {
            return Err(malformed("tensors", "not an object"));
        };
        let mut load = |name: &String, want: &Tensor| -> Result<Tensor, TrainingError> {
            let corrupt = || TrainingError::CorruptTensor(name.clone());
            let record: TensorIn = records
                .remove(name)
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(corrupt)?;
            if record.shape != want.shape() {
                return Err(corrupt());
            }
            Tensor::new(record.shape, record.data).map_err(|_| corrupt())
        };
        let mut params = ModelParams::default();
        for (name, want) in &template.tensors {
            params.tensors.insert(name.clone(), load(name, want)?);
        }
        for (name, want) in &template.buffers {
            params.buffers.insert(name.clone(), load(name, want)?);
        }
        if let Some(extra) = records.keys().next() {
            return Err(TrainingError::CorruptTensor(extra.clone()));
        }
        Ok(Checkpoint {
            config,
            params,
            metadata,
        })
    }
}

/// Atomically writes the checkpoint JSON to `path`.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), TrainingError> {
    write_atomic(path, checkpoint.to_json()?.as_bytes())
}

pub fn load_checkpoint(path: &Path, expected: Option<Variant>) -> Result<Checkpoint, TrainingError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TrainingError::FileNotFound(path.display().to_string()),
        _ => e.into(),
    })?;
    Checkpoint::from_json(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(variant: Variant) -> Checkpoint {
        let config = ModelConfig::new(variant, 4, 2);
        let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        Checkpoint {
            config,
            params,
            metadata: CheckpointMetadata {
                seed: 3,
                epochs: 2,
                valid_mae: Some(0.1 + 0.2),
            },
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        for variant in Variant::ALL {
            let c = sample(variant);
            let json = c.to_json().unwrap();
            let back = Checkpoint::from_json(&json, Some(variant)).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_json().unwrap(), json);
        }
    }

    #[test]
    fn document_layout() {
        let json = sample(Variant::GinVirtual).to_json().unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["variant"], "gin_virtual");
        assert_eq!(v["config"]["latent_dim"], 4);
        assert_eq!(v["metadata"]["epochs"], 2);
        assert_eq!(v["tensors"]["readout.weight"]["shape"], serde_json::json!([4, 1]));
        assert!(v["tensors"]["layers.0.bn.running_var"].is_object());
    }

    #[test]
    fn variant_mismatch() {
        let json = sample(Variant::GinVirtualBnn).to_json().unwrap();
        assert!(matches!(
            Checkpoint::from_json(&json, Some(Variant::GinVirtual)),
            Err(TrainingError::VersionMismatch { .. })
        ));
        let bumped = json.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            Checkpoint::from_json(&bumped, None),
            Err(TrainingError::VersionMismatch { .. })
        ));
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let json = sample(Variant::GinVirtual).to_json().unwrap();
        for cut in [10, json.len() / 2, json.len() - 1] {
            assert!(matches!(
                Checkpoint::from_json(&json[..cut], None),
                Err(TrainingError::IoError(_) | TrainingError::CorruptTensor(_))
            ));
        }
        let mut v: Value = serde_json::from_str(&json).unwrap();
        v["tensors"]["readout.bias"]["data"] = serde_json::json!([]);
        assert!(matches!(
            Checkpoint::from_json(&v.to_string(), None),
            Err(TrainingError::CorruptTensor(name)) if name == "readout.bias"
        ));
        v["tensors"].as_object_mut().unwrap().remove("readout.bias");
        assert!(matches!(
            Checkpoint::from_json(&v.to_string(), None),
            Err(TrainingError::CorruptTensor(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let c = sample(Variant::GinVirtualDiffpool);
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path, None).unwrap(), c);
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing.json"), None),
            Err(TrainingError::FileNotFound(_))
        ));
    }
}
