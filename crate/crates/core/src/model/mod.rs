//! Mask-fill scoring, verbalizer aggregation, the verbalized cross-entropy
//! loss and its analytic gradient for the log-linear reference scorer.
//!
//! Label probabilities are computed in three stages: softmax over the whole
//! vocabulary, summing the probability of each label's words, then
//! renormalizing over the task's labels. With `p = softmax(z)`,
//! `M_l = Σ_{w∈l} p_w` and `T = Σ_l M_l`, the loss `−ln(M_gold / T)` has
//!
//! ```text
//! ∂L/∂z_j = p_j · ([j ∈ task words] / T − [j ∈ gold words] / M_gold)
//! ```
//!
//! and is zero for every word outside the task's verbalizer.

mod checkpoint;
mod direct;

use serde::Serialize;

use crate::corpus::TaskId;
use crate::error::{Error, Result};
use crate::prompting::{PromptInstance, TaskSpec, TaskSpecs, Vocabulary, MASK_TOKEN};

pub use checkpoint::{load_model, model_from_json, model_to_json, save_model, CHECKPOINT_FORMAT_VERSION};
pub use direct::{DirectClassifier, DirectInstance};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub trait MaskFillScorer {
    fn vocabulary(&self) -> &Vocabulary;
    /// Scores for the mask position, one per vocabulary entry.
    fn logits(&self, instance: &PromptInstance) -> Vec<f64>;
}

/// Sparse feature vector: `(feature index, value)` sorted by index.
pub type SparseFeatures = Vec<(usize, f64)>;

/// Token counts over `vocab` plus an always-on bias in the last slot.
pub fn count_features<'a>(vocab: &Vocabulary, tokens: impl IntoIterator<Item = &'a String>) -> SparseFeatures {
    let mut counts: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for t in tokens {
        *counts.entry(vocab.lookup(t)).or_insert(0.0) += 1.0;
    }
    counts.insert(vocab.len(), 1.0);
    counts.into_iter().collect()
}

/// Dense `rows × features` matrix stored feature-major, so one feature's
/// column of row weights is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    features: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, features: usize) -> Self {
        WeightMatrix {
            rows,
            features,
            data: vec![0.0; rows * features],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn get(&self, row: usize, feature: usize) -> f64 {
        self.data[feature * self.rows + row]
    }

    pub fn set(&mut self, row: usize, feature: usize, value: f64) {
        self.data[feature * self.rows + row] = value;
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.data[feature * self.rows..(feature + 1) * self.rows]
    }

    pub(crate) fn column_mut(&mut self, feature: usize) -> &mut [f64] {
        &mut self.data[feature * self.rows..(feature + 1) * self.rows]
    }

    /// `W · φ`.
    pub fn apply(&self, features: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for &(f, x) in features {
            for (o, w) in out.iter_mut().zip(self.column(f)) {
                *o += w * x;
            }
        }
        out
    }

    /// `self += scale · outer(row_grad, φ)`.
    pub fn add_outer(&mut self, row_grad: &[(usize, f64)], features: &[(usize, f64)], scale: f64) {
        for &(f, x) in features {
            let col = self.column_mut(f);
            for &(r, g) in row_grad {
                col[r] += scale * g * x;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &WeightMatrix, scale: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &WeightMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Row-major copy, one `Vec` per row.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|r| (0..self.features).map(|f| self.get(r, f)).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], features: usize) -> Self {
        let mut m = WeightMatrix::zeros(rows.len(), features);
        for (r, row) in rows.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                m.set(r, f, *v);
            }
        }
        m
    }
}

/// The log-linear reference scorer: `logits = W · φ(instance)` where φ
/// counts vocabulary tokens outside the mask plus a bias feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFillModel {
    vocabulary: Vocabulary,
    weights: WeightMatrix,
}

impl MaskFillModel {
    pub fn zeros(vocabulary: Vocabulary) -> Self {
        let v = vocabulary.len();
        MaskFillModel {
            weights: WeightMatrix::zeros(v, v + 1),
            vocabulary,
        }
    }

    pub fn from_weights(vocabulary: Vocabulary, weights: WeightMatrix) -> Result<Self> {
        let v = vocabulary.len();
        if weights.rows() != v || weights.features() != v + 1 {
            return Err(Error::InvalidInput(format!(
                "weights are {}x{}, expected {v}x{}",
                weights.rows(),
                weights.features(),
                v + 1
            )));
        }
        Ok(MaskFillModel {
            vocabulary,
            weights,
        })
    }

    pub fn num_features(&self) -> usize {
        self.vocabulary.len() + 1
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightMatrix {
        &mut self.weights
    }

    pub fn featurize(&self, instance: &PromptInstance) -> SparseFeatures {
        count_features(
            &self.vocabulary,
            instance
                .tokens
                .iter()
                .enumerate()
                .filter(|(i, t)| *i != instance.mask_position && *t != MASK_TOKEN)
                .map(|(_, t)| t),
        )
    }

    pub fn logits_for(&self, features: &[(usize, f64)]) -> Vec<f64> {
        self.weights.apply(features)
    }
}

impl MaskFillScorer for MaskFillModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    fn logits(&self, instance: &PromptInstance) -> Vec<f64> {
        self.logits_for(&self.featurize(instance))
    }
}

/// A task's verbalizer with label words resolved to vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Verbalizer {
    pub task: TaskId,
    /// Vocabulary indices of each label's words, in label order.
    pub words: Vec<Vec<usize>>,
}

impl Verbalizer {
    pub fn resolve(spec: &TaskSpec, vocab: &Vocabulary) -> Result<Self> {
        let words = spec
            .verbalizer
            .iter()
            .map(|ws| {
                ws.iter()
                    .map(|w| {
                        vocab.get(w).ok_or_else(|| {
                            Error::InvalidInput(format!(
                                "label word '{w}' of task {} is missing from the vocabulary",
                                spec.task
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Verbalizer {
            task: spec.task,
            words,
        })
    }

    pub fn labels(&self) -> &'static [&'static str] {
        self.task.labels()
    }
}

/// Resolved verbalizers for all five tasks, indexed by task.
#[derive(Debug, Clone, PartialEq)]
pub struct Verbalizers(Vec<Verbalizer>);

impl Verbalizers {
    pub fn resolve(specs: &TaskSpecs, vocab: &Vocabulary) -> Result<Self> {
        specs
            .iter()
            .map(|s| Verbalizer::resolve(s, vocab))
            .collect::<Result<Vec<_>>>()
            .map(Verbalizers)
    }

    pub fn get(&self, task: TaskId) -> &Verbalizer {
        &self.0[task.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelDistribution {
    pub task: TaskId,
    /// Parallel to `task.labels()`.
    pub probabilities: Vec<f64>,
}

impl LabelDistribution {
    pub fn prob(&self, label: &str) -> Option<f64> {
        self.task.label_index(label).map(|i| self.probabilities[i])
    }

    /// Most probable label; ties go to the label listed first.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    pub fn label(&self) -> &'static str {
        self.task.labels()[self.argmax()]
    }

    pub fn labelled(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.task.labels().iter().copied().zip(self.probabilities.iter().copied())
    }
}

/// Stable softmax over all logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

struct Masses {
    vocab_probs: Vec<f64>,
    label_mass: Vec<f64>,
    total: f64,
}

fn label_masses(logits: &[f64], verbalizer: &Verbalizer) -> Masses {
    let vocab_probs = softmax(logits);
    let label_mass: Vec<f64> = verbalizer
        .words
        .iter()
        .map(|ws| ws.iter().map(|&w| vocab_probs[w]).sum())
        .collect();
    let total = label_mass.iter().sum();
    Masses {
        vocab_probs,
        label_mass,
        total,
    }
}

pub fn verbalize(logits: &[f64], verbalizer: &Verbalizer) -> LabelDistribution {
    let m = label_masses(logits, verbalizer);
    let probabilities = if m.total > 0.0 {
        m.label_mass.iter().map(|x| x / m.total).collect()
    } else {
        // every label word underflowed; fall back to list-size proportions
        let sizes: Vec<f64> = verbalizer.words.iter().map(|w| w.len() as f64).collect();
        let n: f64 = sizes.iter().sum();
        sizes.into_iter().map(|s| s / n).collect()
    };
    LabelDistribution {
        task: verbalizer.task,
        probabilities,
    }
}

pub fn predict(
    scorer: &dyn MaskFillScorer,
    instance: &PromptInstance,
    verbalizer: &Verbalizer,
) -> (&'static str, LabelDistribution) {
    let dist = verbalize(&scorer.logits(instance), verbalizer);
    (dist.label(), dist)
}

fn gold_index(instance: &PromptInstance) -> Result<usize> {
    let gold = instance
        .gold
        .as_deref()
        .ok_or_else(|| Error::MissingGold(instance.note_id.clone()))?;
    instance.task.label_index(gold).ok_or_else(|| Error::UnknownLabel {
        task: instance.task,
        value: gold.to_string(),
    })
}

pub fn nll_loss(scorer: &dyn MaskFillScorer, instance: &PromptInstance, verbalizer: &Verbalizer) -> Result<f64> {
    let gold = gold_index(instance)?;
    let dist = verbalize(&scorer.logits(instance), verbalizer);
    Ok(-dist.probabilities[gold].max(PROB_FLOOR).ln())
}

/// Loss and `∂L/∂logits` (sparse over the task's words) for one instance.
pub(crate) fn logit_gradient(logits: &[f64], verbalizer: &Verbalizer, gold: usize) -> (f64, Vec<(usize, f64)>) {
    let m = label_masses(logits, verbalizer);
    let q_gold = if m.total > 0.0 { m.label_mass[gold] / m.total } else { 0.0 };
    let loss = -q_gold.max(PROB_FLOOR).ln();
    if q_gold < PROB_FLOOR {
        // the clamp is active, so the loss is locally constant
        return (loss, Vec::new());
    }
    let mut grad = Vec::new();
    for (label, words) in verbalizer.words.iter().enumerate() {
        for &w in words {
            let p = m.vocab_probs[w];
            let mut g = p / m.total;
            if label == gold {
                g -= p / m.label_mass[gold];
            }
            grad.push((w, g));
        }
    }
    (loss, grad)
}

/// A prompt instance with precomputed features and gold index, ready for
/// repeated training passes.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub task: TaskId,
    pub features: SparseFeatures,
    pub gold: usize,
}

impl MaskFillModel {
    pub fn prepare(&self, instance: &PromptInstance) -> Result<PreparedInstance> {
        Ok(PreparedInstance {
            task: instance.task,
            features: self.featurize(instance),
            gold: gold_index(instance)?,
        })
    }

    /// Mean loss over `batch`, accumulating `scale · ∂(mean loss)/∂W` into
    /// `grad`.
    pub(crate) fn accumulate_batch(
        &self,
        batch: &[&PreparedInstance],
        verbalizers: &Verbalizers,
        grad: &mut WeightMatrix,
        scale: f64,
    ) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let n = batch.len() as f64;
        let mut total = 0.0;
        for inst in batch {
            let logits = self.logits_for(&inst.features);
            let (loss, g) = logit_gradient(&logits, verbalizers.get(inst.task), inst.gold);
            total += loss;
            grad.add_outer(&g, &inst.features, scale / n);
        }
        total / n
    }

    /// Mean loss over `batch` without gradients.
    pub fn batch_loss(&self, batch: &[&PreparedInstance], verbalizers: &Verbalizers) -> f64 {
        let n = batch.len() as f64;
        batch
            .iter()
            .map(|inst| {
                let logits = self.logits_for(&inst.features);
                logit_gradient(&logits, verbalizers.get(inst.task), inst.gold).0
            })
            .sum::<f64>()
            / n
    }
}

/// Analytic gradient of the mean verbalized NLL over `batch` with respect
/// to the weights.
pub fn loss_gradient(
    model: &MaskFillModel,
    batch: &[PromptInstance],
    verbalizers: &Verbalizers,
) -> Result<WeightMatrix> {
    let prepared = batch.iter().map(|i| model.prepare(i)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PreparedInstance> = prepared.iter().collect();
    let mut grad = WeightMatrix::zeros(model.vocabulary.len(), model.num_features());
    model.accumulate_batch(&refs, verbalizers, &mut grad, 1.0);
    Ok(grad)
}
