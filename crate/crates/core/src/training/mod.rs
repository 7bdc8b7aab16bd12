//! Mini-batch SGD for single-task and multi-task prompt-based learning and
//! for the direct classifier, plus k-fold cross-validation.
//!
//! Multi-task training draws one batch per task per step from independent
//! cycling loaders, averages the task gradients and applies a single update.
//! An epoch is `ceil(largest task size / batch size)` steps, so smaller tasks
//! are revisited within an epoch.

mod cv;
mod pipeline;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TaskId;
use crate::error::{Error, Result};
use crate::model::{
    DirectClassifier, DirectInstance, MaskFillModel, MaskFillScorer, PreparedInstance, Verbalizers, WeightMatrix,
};
use crate::prompting::{PromptInstance, TaskSpecs};

pub use cv::{kfold_split, run_cv, select_learning_rate, CvReport, FoldPlan, FoldResult, LrScore};
pub use pipeline::{fit, training_instances, Component, Predictor};

/// Which model family to train. `None` means every task, each with its own
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "task")]
pub enum TrainMode {
    SingleTask(Option<TaskId>),
    MultiTask,
    Direct(Option<TaskId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            batch_size: 8,
            epochs: 30,
            seed: 42,
            mode: TrainMode::MultiTask,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainStepReport {
    pub step: usize,
    pub epoch: usize,
    /// Mean batch loss per task, measured before the update.
    pub task_losses: BTreeMap<TaskId, f64>,
    /// Mean of `task_losses`.
    pub total: f64,
    /// Order in which task batches were drawn this step.
    pub task_order: Vec<TaskId>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub steps: Vec<TrainStepReport>,
    /// Mean step loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Independent RNG stream `stream` derived from a base seed.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Endless shuffled pass over `0..len`; a batch never spans two passes, so
/// the last batch of a pass may be short.
struct CyclingLoader {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl CyclingLoader {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        let mut loader = CyclingLoader {
            order: (0..len).collect(),
            pos: len,
            rng,
        };
        loader.reshuffle();
        loader
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next_batch(&mut self, batch_size: usize) -> &[usize] {
        if self.pos >= self.order.len() {
            self.reshuffle();
        }
        let start = self.pos;
        self.pos = (start + batch_size).min(self.order.len());
        &self.order[start..self.pos]
    }
}

/// Applies `W -= lr · grad` on the touched feature columns and clears them
/// in `grad`.
fn apply_update(weights: &mut WeightMatrix, grad: &mut WeightMatrix, touched: &BTreeSet<usize>, lr: f64) {
    for &f in touched {
        let g = grad.column_mut(f);
        let w = weights.column_mut(f);
        for (wi, gi) in w.iter_mut().zip(g.iter_mut()) {
            *wi -= lr * *gi;
            *gi = 0.0;
        }
    }
}

fn touched_features<'a>(features: impl IntoIterator<Item = &'a [(usize, f64)]>, into: &mut BTreeSet<usize>) {
    for fs in features {
        into.extend(fs.iter().map(|(f, _)| *f));
    }
}

fn prepare_all(model: &MaskFillModel, data: &[PromptInstance]) -> Result<Vec<PreparedInstance>> {
    data.iter()
        .map(|inst| {
            if inst.gold.is_none() {
                return Err(Error::MissingGold(inst.note_id.clone()));
            }
            model.prepare(inst)
        })
        .collect()
}

fn epoch_means(steps: &[TrainStepReport], epochs: usize) -> Vec<f64> {
    (0..epochs)
        .map(|e| {
            let losses: Vec<f64> = steps.iter().filter(|s| s.epoch == e).map(|s| s.total).collect();
            losses.iter().sum::<f64>() / losses.len() as f64
        })
        .collect()
}

/// Trains `model` on instances of one task.
pub fn train_single_task(
    model: MaskFillModel,
    data: &[PromptInstance],
    specs: &TaskSpecs,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<MaskFillModel>> {
    cfg.validate()?;
    let task = match data.first() {
        Some(inst) => inst.task,
        None => return Err(Error::InvalidInput("no training instances".into())),
    };
    if let Some(other) = data.iter().find(|i| i.task != task) {
        return Err(Error::InvalidInput(format!(
            "single-task training got instances for both {task} and {}",
            other.task
        )));
    }
    let mut grouped = BTreeMap::new();
    grouped.insert(task, data.to_vec());
    run_prompt_training(model, &grouped, specs, cfg)
}

/// Trains one shared model on every task in `data` jointly.
pub fn train_multi_task(
    model: MaskFillModel,
    data: &BTreeMap<TaskId, Vec<PromptInstance>>,
    specs: &TaskSpecs,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<MaskFillModel>> {
    cfg.validate()?;
    if let Some((task, _)) = data.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyTask(*task));
    }
    if data.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "multi-task training needs at least two tasks, got {}",
            data.len()
        )));
    }
    if let Some((task, inst)) = data
        .iter()
        .find_map(|(t, v)| v.iter().find(|i| i.task != *t).map(|i| (*t, i)))
    {
        return Err(Error::InvalidInput(format!(
            "instance for {} listed under {task}",
            inst.task
        )));
    }
    run_prompt_training(model, data, specs, cfg)
}

fn run_prompt_training(
    mut model: MaskFillModel,
    data: &BTreeMap<TaskId, Vec<PromptInstance>>,
    specs: &TaskSpecs,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<MaskFillModel>> {
    let verbalizers = Verbalizers::resolve(specs, model.vocabulary())?;
    let prepared: BTreeMap<TaskId, Vec<PreparedInstance>> = data
        .iter()
        .map(|(t, v)| Ok((*t, prepare_all(&model, v)?)))
        .collect::<Result<_>>()?;
    let tasks: Vec<TaskId> = prepared.keys().copied().collect();
    let largest = prepared.values().map(Vec::len).max().unwrap_or(0);
    let steps_per_epoch = largest.div_ceil(cfg.batch_size);

    let mut order_rng = stream_rng(cfg.seed, 0);
    let mut loaders: BTreeMap<TaskId, CyclingLoader> = prepared
        .iter()
        .map(|(t, v)| (*t, CyclingLoader::new(v.len(), stream_rng(cfg.seed, 1 + t.index() as u64))))
        .collect();

    let (rows, features) = (model.weights().rows(), model.weights().features());
    let mut grad = WeightMatrix::zeros(rows, features);
    let mut touched = BTreeSet::new();
    let mut steps = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let task_weight = 1.0 / tasks.len() as f64;

    for epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let mut task_order = tasks.clone();
            task_order.shuffle(&mut order_rng);
            let mut task_losses = BTreeMap::new();
            for &task in &task_order {
                let pool = &prepared[&task];
                let batch: Vec<&PreparedInstance> = loaders
                    .get_mut(&task)
                    .expect("loader per task")
                    .next_batch(cfg.batch_size)
                    .iter()
                    .map(|&i| &pool[i])
                    .collect();
                touched_features(batch.iter().map(|b| b.features.as_slice()), &mut touched);
                let loss = model.accumulate_batch(&batch, &verbalizers, &mut grad, task_weight);
                task_losses.insert(task, loss);
            }
            apply_update(model.weights_mut(), &mut grad, &touched, cfg.learning_rate);
            touched.clear();
            let total = task_losses.values().sum::<f64>() / task_losses.len() as f64;
            steps.push(TrainStepReport {
                step: steps.len(),
                epoch,
                task_losses,
                total,
                task_order,
            });
        }
        log::debug!("epoch {epoch}: loss {:.5}", steps.last().map_or(0.0, |s| s.total));
    }
    let epoch_losses = epoch_means(&steps, cfg.epochs);
    Ok(TrainOutcome {
        model,
        steps,
        epoch_losses,
    })
}

/// Trains a direct classifier on `(input text, gold label)` pairs.
pub fn train_direct(
    mut classifier: DirectClassifier,
    data: &[(&str, &str)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<DirectClassifier>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTask(classifier.task()));
    }
    let task = classifier.task();
    let prepared: Vec<DirectInstance> = data
        .iter()
        .map(|(text, gold)| classifier.prepare(text, gold))
        .collect::<Result<_>>()?;
    let steps_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let mut loader = CyclingLoader::new(prepared.len(), stream_rng(cfg.seed, 1 + task.index() as u64));
    let (rows, features) = (classifier.weights().rows(), classifier.weights().features());
    let mut grad = WeightMatrix::zeros(rows, features);
    let mut touched = BTreeSet::new();
    let mut steps = Vec::new();
    for epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let batch: Vec<&DirectInstance> = loader
                .next_batch(cfg.batch_size)
                .iter()
                .map(|&i| &prepared[i])
                .collect();
            touched_features(batch.iter().map(|b| b.features.as_slice()), &mut touched);
            let loss = classifier.accumulate_batch(&batch, &mut grad, 1.0);
            apply_update(classifier.weights_mut(), &mut grad, &touched, cfg.learning_rate);
            touched.clear();
            steps.push(TrainStepReport {
                step: steps.len(),
                epoch,
                task_losses: [(task, loss)].into_iter().collect(),
                total: loss,
                task_order: vec![task],
            });
        }
    }
    let epoch_losses = epoch_means(&steps, cfg.epochs);
    Ok(TrainOutcome {
        model: classifier,
        steps,
        epoch_losses,
    })
}
