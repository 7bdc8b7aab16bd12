//! Direct multiclass classifier over the same bag-of-tokens features,
//! scoring a task's labels without a template or verbalizer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{check_shape, check_version, write_json, CHECKPOINT_FORMAT_VERSION};
use super::{count_features, softmax, LabelDistribution, SparseFeatures, WeightMatrix, PROB_FLOOR};
use crate::corpus::TaskId;
use crate::error::{Error, Result};
use crate::prompting::{Tokenizer, Vocabulary};

#[derive(Debug, Clone)]
pub struct DirectInstance {
    pub features: SparseFeatures,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectClassifier {
    task: TaskId,
    vocabulary: Vocabulary,
    weights: WeightMatrix,
}

impl DirectClassifier {
    pub fn zeros(task: TaskId, vocabulary: Vocabulary) -> Self {
        let features = vocabulary.len() + 1;
        DirectClassifier {
            task,
            weights: WeightMatrix::zeros(task.labels().len(), features),
            vocabulary,
        }
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightMatrix {
        &mut self.weights
    }

    pub fn featurize(&self, text: &str) -> SparseFeatures {
        count_features(&self.vocabulary, Tokenizer.tokenize(text).iter())
    }

    pub fn prepare(&self, text: &str, gold: &str) -> Result<DirectInstance> {
        let gold = self.task.label_index(gold).ok_or_else(|| Error::UnknownLabel {
            task: self.task,
            value: gold.to_string(),
        })?;
        Ok(DirectInstance {
            features: self.featurize(text),
            gold,
        })
    }

    pub fn distribution_for(&self, features: &[(usize, f64)]) -> LabelDistribution {
        LabelDistribution {
            task: self.task,
            probabilities: softmax(&self.weights.apply(features)),
        }
    }

    pub fn classify(&self, text: &str) -> LabelDistribution {
        self.distribution_for(&self.featurize(text))
    }

    /// Mean cross-entropy over `batch`, accumulating `scale · ∂/∂W`.
    pub(crate) fn accumulate_batch(&self, batch: &[&DirectInstance], grad: &mut WeightMatrix, scale: f64) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let n = batch.len() as f64;
        let mut total = 0.0;
        for inst in batch {
            let probs = softmax(&self.weights.apply(&inst.features));
            total -= probs[inst.gold].max(PROB_FLOOR).ln();
            let g: Vec<(usize, f64)> = probs
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p - if i == inst.gold { 1.0 } else { 0.0 }))
                .collect();
            grad.add_outer(&g, &inst.features, scale / n);
        }
        total / n
    }

    pub fn batch_loss(&self, batch: &[&DirectInstance]) -> f64 {
        let mut scratch = WeightMatrix::zeros(self.weights.rows(), self.weights.features());
        self.accumulate_batch(batch, &mut scratch, 0.0)
    }

    pub fn to_json(&self) -> String {
        let out = DirectOut {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "direct",
            task: self.task,
            vocabulary: self.vocabulary.tokens(),
            dim_features: self.weights.features(),
            weights: self.weights.to_rows(),
        };
        serde_json::to_string(&out).expect("finite weights serialize")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        check_version(json)?;
        let raw: DirectIn =
            serde_json::from_str(json).map_err(|e| Error::Checkpoint(format!("corrupt file: {e}")))?;
        if raw.kind != "direct" {
            return Err(Error::Checkpoint(format!("unexpected checkpoint kind '{}'", raw.kind)));
        }
        let vocabulary =
            Vocabulary::from_tokens(raw.vocabulary).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if raw.dim_features != vocabulary.len() + 1 {
            return Err(Error::Checkpoint(format!(
                "dim_features is {}, expected {}",
                raw.dim_features,
                vocabulary.len() + 1
            )));
        }
        check_shape(&raw.weights, raw.task.labels().len(), raw.dim_features)?;
        Ok(DirectClassifier {
            task: raw.task,
            weights: WeightMatrix::from_rows(&raw.weights, raw.dim_features),
            vocabulary,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

#[derive(Serialize)]
struct DirectOut<'a> {
    format_version: u32,
    kind: &'static str,
    task: TaskId,
    vocabulary: &'a [String],
    dim_features: usize,
    weights: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DirectIn {
    #[allow(dead_code)]
    format_version: u32,
    kind: String,
    task: TaskId,
    vocabulary: Vec<String>,
    dim_features: usize,
    weights: Vec<Vec<f64>>,
}
