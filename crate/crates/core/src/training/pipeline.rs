//! From annotated notes to a trained predictor and back to prediction
//! records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::{train_direct, train_multi_task, train_single_task, TrainConfig, TrainMode};
use crate::corpus::{ClinicalNote, TaskId};
use crate::error::{Error, Result};
use crate::evaluation::PredictionRecord;
use crate::model::{
    model_from_json, model_to_json, predict, DirectClassifier, LabelDistribution, MaskFillModel, Verbalizers,
    CHECKPOINT_FORMAT_VERSION,
};
use crate::prompting::{build_vocabulary, PromptInstance, TaskSpecs, Vocabulary};

/// A trained model together with the tasks it answers.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Prompt { tasks: Vec<TaskId>, model: MaskFillModel },
    Direct(DirectClassifier),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub components: Vec<Component>,
}

impl Predictor {
    pub fn tasks(&self) -> Vec<TaskId> {
        let mut tasks: Vec<TaskId> = self
            .components
            .iter()
            .flat_map(|c| match c {
                Component::Prompt { tasks, .. } => tasks.clone(),
                Component::Direct(d) => vec![d.task()],
            })
            .collect();
        tasks.sort();
        tasks.dedup();
        tasks
    }

    /// Label distributions for every task this predictor covers.
    pub fn distributions(&self, input_text: &str, specs: &TaskSpecs) -> Result<Vec<LabelDistribution>> {
        let mut out = Vec::new();
        for c in &self.components {
            match c {
                Component::Prompt { tasks, model } => {
                    let verbalizers = Verbalizers::resolve(specs, crate::model::MaskFillScorer::vocabulary(model))?;
                    for &task in tasks {
                        let inst = PromptInstance::new("", input_text, specs.get(task), None);
                        out.push(predict(model, &inst, verbalizers.get(task)).1);
                    }
                }
                Component::Direct(d) => out.push(d.classify(input_text)),
            }
        }
        out.sort_by_key(|d| d.task);
        Ok(out)
    }

    pub fn predict_record(&self, id: &str, input_text: &str, specs: &TaskSpecs) -> Result<PredictionRecord> {
        let mut predictions = BTreeMap::new();
        let mut probabilities = BTreeMap::new();
        for dist in self.distributions(input_text, specs)? {
            predictions.insert(dist.task, dist.label().to_string());
            probabilities.insert(
                dist.task,
                dist.labelled().map(|(l, p)| (l.to_string(), p)).collect(),
            );
        }
        Ok(PredictionRecord {
            id: id.to_string(),
            predictions,
            probabilities,
        })
    }

    /// One record per note, in input order, computed on the rayon pool.
    pub fn predict_all(
        &self,
        notes: &[ClinicalNote],
        inputs: &[String],
        specs: &TaskSpecs,
    ) -> Result<Vec<PredictionRecord>> {
        check_aligned(notes, inputs)?;
        notes
            .par_iter()
            .zip(inputs.par_iter())
            .map(|(n, text)| self.predict_record(&n.id, text, specs))
            .collect()
    }
}

impl Predictor {
    /// A single prompt model for all five tasks is written in the plain
    /// model checkpoint format. Anything else becomes a bundle
    /// `{"format_version", "components": [...]}` whose entries embed the
    /// per-model checkpoints.
    pub fn to_json(&self) -> String {
        if let [Component::Prompt { tasks, model }] = self.components.as_slice() {
            if tasks.as_slice() == TaskId::ALL {
                return model_to_json(model);
            }
        }
        let parse = |s: String| serde_json::from_str::<Value>(&s).expect("checkpoint is JSON");
        let components: Vec<Value> = self
            .components
            .iter()
            .map(|c| match c {
                Component::Prompt { tasks, model } => json!({
                    "kind": "prompt",
                    "tasks": tasks,
                    "model": parse(model_to_json(model)),
                }),
                Component::Direct(d) => json!({"kind": "direct", "model": parse(d.to_json())}),
            })
            .collect();
        json!({"format_version": CHECKPOINT_FORMAT_VERSION, "components": components}).to_string()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let corrupt = |m: String| Error::Checkpoint(m);
        let value: Value = serde_json::from_str(json).map_err(|e| corrupt(format!("corrupt file: {e}")))?;
        let Some(components) = value.get("components") else {
            let model = model_from_json(json)?;
            return Ok(Predictor {
                components: vec![Component::Prompt {
                    tasks: TaskId::ALL.to_vec(),
                    model,
                }],
            });
        };
        if value.get("format_version").and_then(Value::as_u64) != Some(CHECKPOINT_FORMAT_VERSION as u64) {
            return Err(corrupt(format!(
                "unsupported or missing format_version, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let components = components
            .as_array()
            .ok_or_else(|| corrupt("components must be a list".into()))?
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let model = c
                    .get("model")
                    .ok_or_else(|| corrupt(format!("component {i} has no model")))?
                    .to_string();
                match c.get("kind").and_then(Value::as_str) {
                    Some("prompt") => {
                        let tasks: Vec<TaskId> = serde_json::from_value(c.get("tasks").cloned().unwrap_or_default())
                            .map_err(|e| corrupt(format!("component {i}: tasks: {e}")))?;
                        if tasks.is_empty() {
                            return Err(corrupt(format!("component {i} covers no task")));
                        }
                        Ok(Component::Prompt {
                            tasks,
                            model: model_from_json(&model)?,
                        })
                    }
                    Some("direct") => Ok(Component::Direct(DirectClassifier::from_json(&model)?)),
                    other => Err(corrupt(format!("component {i} has unknown kind {other:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if components.is_empty() {
            return Err(corrupt("bundle has no components".into()));
        }
        Ok(Predictor { components })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

fn check_aligned(notes: &[ClinicalNote], inputs: &[String]) -> Result<()> {
    if notes.len() != inputs.len() {
        return Err(Error::InvalidInput(format!(
            "{} notes but {} input texts",
            notes.len(),
            inputs.len()
        )));
    }
    Ok(())
}

/// Prompt instances for `task` from every note that has gold for it.
pub fn training_instances(
    notes: &[ClinicalNote],
    inputs: &[String],
    specs: &TaskSpecs,
    task: TaskId,
) -> Vec<PromptInstance> {
    notes
        .iter()
        .zip(inputs)
        .filter_map(|(n, text)| {
            n.gold(task)
                .map(|g| PromptInstance::new(n.id.clone(), text, specs.get(task), Some(g)))
        })
        .collect()
}

fn direct_pairs<'a>(notes: &'a [ClinicalNote], inputs: &'a [String], task: TaskId) -> Vec<(&'a str, &'a str)> {
    notes
        .iter()
        .zip(inputs)
        .filter_map(|(n, text)| n.gold(task).map(|g| (text.as_str(), g)))
        .collect()
}

fn tasks_of(mode: TrainMode) -> Vec<TaskId> {
    match mode {
        TrainMode::SingleTask(Some(t)) | TrainMode::Direct(Some(t)) => vec![t],
        _ => TaskId::ALL.to_vec(),
    }
}

fn fit_one(
    notes: &[ClinicalNote],
    inputs: &[String],
    specs: &TaskSpecs,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    task: TaskId,
    direct: bool,
) -> Result<Component> {
    if direct {
        let data = direct_pairs(notes, inputs, task);
        if data.is_empty() {
            return Err(Error::EmptyTask(task));
        }
        let clf = DirectClassifier::zeros(task, vocab.clone());
        return Ok(Component::Direct(train_direct(clf, &data, cfg)?.model));
    }
    let data = training_instances(notes, inputs, specs, task);
    if data.is_empty() {
        return Err(Error::EmptyTask(task));
    }
    let model = MaskFillModel::zeros(vocab.clone());
    Ok(Component::Prompt {
        tasks: vec![task],
        model: train_single_task(model, &data, specs, cfg)?.model,
    })
}

/// Builds the vocabulary from the training inputs and trains according to
/// `cfg.mode`. Per-task models are trained in parallel.
pub fn fit(notes: &[ClinicalNote], inputs: &[String], specs: &TaskSpecs, cfg: &TrainConfig) -> Result<Predictor> {
    cfg.validate()?;
    check_aligned(notes, inputs)?;
    let vocab = build_vocabulary(inputs.iter().map(String::as_str), specs);
    let tasks = tasks_of(cfg.mode);
    let components = match cfg.mode {
        TrainMode::MultiTask => {
            let data: BTreeMap<TaskId, Vec<PromptInstance>> = tasks
                .iter()
                .map(|&t| (t, training_instances(notes, inputs, specs, t)))
                .collect();
            let model = train_multi_task(MaskFillModel::zeros(vocab), &data, specs, cfg)?.model;
            vec![Component::Prompt { tasks, model }]
        }
        TrainMode::SingleTask(_) | TrainMode::Direct(_) => {
            let direct = matches!(cfg.mode, TrainMode::Direct(_));
            tasks
                .par_iter()
                .map(|&t| fit_one(notes, inputs, specs, cfg, &vocab, t, direct))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(Predictor { components })
}
