//! JSON checkpoints. Floats are written in shortest round-trip form and
//! parsed exactly, so weights survive a save/load cycle bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MaskFillModel, WeightMatrix};
use crate::error::{Error, Result};
use crate::prompting::Vocabulary;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format_version: u32,
    vocabulary: &'a [String],
    dim_features: usize,
    weights: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    #[allow(dead_code)]
    format_version: u32,
    vocabulary: Vec<String>,
    dim_features: usize,
    weights: Vec<Vec<f64>>,
}

pub(crate) fn check_version(json: &str) -> Result<()> {
    let probe: VersionProbe =
        serde_json::from_str(json).map_err(|e| Error::Checkpoint(format!("corrupt file: {e}")))?;
    match probe.format_version {
        Some(serde_json::Value::Number(n)) if n.as_u64() == Some(CHECKPOINT_FORMAT_VERSION as u64) => Ok(()),
        Some(other) => Err(Error::Checkpoint(format!(
            "unsupported format_version {other}, expected {CHECKPOINT_FORMAT_VERSION}"
        ))),
        None => Err(Error::Checkpoint("missing format_version".into())),
    }
}

/// Checks that `weights` is `rows × dim_features`, naming the first bad row.
pub(crate) fn check_shape(weights: &[Vec<f64>], rows: usize, dim_features: usize) -> Result<()> {
    if weights.len() != rows {
        return Err(Error::Checkpoint(format!(
            "expected {rows} weight rows, found {}",
            weights.len()
        )));
    }
    if let Some((r, row)) = weights.iter().enumerate().find(|(_, w)| w.len() != dim_features) {
        return Err(Error::Checkpoint(format!(
            "weights row {r} has {} values, expected {dim_features}",
            row.len()
        )));
    }
    Ok(())
}

pub(crate) fn write_json(path: &Path, json: &str) -> Result<()> {
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn model_to_json(model: &MaskFillModel) -> String {
    let out = CheckpointOut {
        format_version: CHECKPOINT_FORMAT_VERSION,
        vocabulary: model.vocabulary.tokens(),
        dim_features: model.num_features(),
        weights: model.weights.to_rows(),
    };
    serde_json::to_string(&out).expect("finite weights serialize")
}

pub fn model_from_json(json: &str) -> Result<MaskFillModel> {
    check_version(json)?;
    let raw: CheckpointIn =
        serde_json::from_str(json).map_err(|e| Error::Checkpoint(format!("corrupt file: {e}")))?;
    let vocabulary = Vocabulary::from_tokens(raw.vocabulary).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if raw.dim_features != vocabulary.len() + 1 {
        return Err(Error::Checkpoint(format!(
            "dim_features is {}, expected vocabulary size + 1 = {}",
            raw.dim_features,
            vocabulary.len() + 1
        )));
    }
    check_shape(&raw.weights, vocabulary.len(), raw.dim_features)?;
    let weights = WeightMatrix::from_rows(&raw.weights, raw.dim_features);
    MaskFillModel::from_weights(vocabulary, weights)
}

pub fn save_model(model: &MaskFillModel, path: impl AsRef<Path>) -> Result<()> {
    if model.weights.max_abs().is_nan() || !model.weights.max_abs().is_finite() {
        return Err(Error::Checkpoint("refusing to save non-finite weights".into()));
    }
    write_json(path.as_ref(), &model_to_json(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MaskFillModel> {
    let path = path.as_ref();
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaskFillScorer;
    use crate::prompting::{build_vocabulary, PromptInstance, TaskSpecs};
    use crate::corpus::TaskId;

    fn model() -> MaskFillModel {
        let specs = TaskSpecs::default();
        let vocab = build_vocabulary(["menses are regular"], &specs);
        let mut m = MaskFillModel::zeros(vocab);
        let (rows, feats) = (m.weights.rows(), m.weights.features());
        for r in 0..rows {
            for f in 0..feats {
                m.weights_mut().set(r, f, ((r * 31 + f * 7) as f64).sin() / 3.0);
            }
        }
        m
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let back = model_from_json(&model_to_json(&m)).unwrap();
        assert_eq!(back, m);
        let specs = TaskSpecs::default();
        let inst = PromptInstance::new("n", "menses are irregular", specs.get(TaskId::Regularity), None);
        let a: Vec<u64> = m.logits(&inst).iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = back.logits(&inst).iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let json = model_to_json(&model()).replacen("\"format_version\":1", "\"format_version\":2", 1);
        let err = model_from_json(&json).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");
    }

    #[test]
    fn truncated_row_is_named() {
        let m = model();
        let mut value: serde_json::Value = serde_json::from_str(&model_to_json(&m)).unwrap();
        value["weights"][3].as_array_mut().unwrap().pop();
        let err = model_from_json(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("weights row 3"), "{err}");
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(model_from_json("{\"format_version\":1,"), Err(Error::Checkpoint(_))));
        assert!(matches!(model_from_json("[]"), Err(Error::Checkpoint(_))));
    }
}
