//! k-fold cross-validation and learning-rate selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::pipeline::{fit, Predictor};
use super::TrainConfig;
use crate::corpus::{ClinicalNote, TaskId};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::prompting::TaskSpecs;

/// Test indices for each fold; every index appears in exactly one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub n: usize,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut held_out = vec![false; self.n];
        for &i in &self.folds[fold] {
            held_out[i] = true;
        }
        (0..self.n).filter(|&i| !held_out[i]).collect()
    }
}

/// Shuffles `0..n` with `seed` and deals indices round-robin into `k` folds,
/// so fold sizes differ by at most one (91 into 3 gives 31, 30, 30).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidConfig(format!("{k} folds for only {n} notes")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (j, i) in order.into_iter().enumerate() {
        folds[j % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { folds, n })
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Mean over folds where the task had gold support.
    pub mean_macro_f1: BTreeMap<TaskId, Option<f64>>,
    pub overall_macro_f1: Option<f64>,
    /// Retrained on every note after the folds.
    #[serde(skip)]
    pub final_predictor: Option<Predictor>,
}

fn subset<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Runs k-fold cross-validation. `inputs[i]` is the model input for
/// `notes[i]`. Fold `i` trains with seed `cfg.seed + i`; folds run in
/// parallel but results do not depend on scheduling.
pub fn run_cv(
    notes: &[ClinicalNote],
    inputs: &[String],
    specs: &TaskSpecs,
    cfg: &TrainConfig,
    k: usize,
    retrain_final: bool,
) -> Result<CvReport> {
    cfg.validate()?;
    if notes.len() != inputs.len() {
        return Err(Error::InvalidInput(format!(
            "{} notes but {} input texts",
            notes.len(),
            inputs.len()
        )));
    }
    let plan = kfold_split(notes.len(), k, cfg.seed)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|i| {
            let train = plan.train_indices(i);
            let test = plan.test_indices(i);
            let fold_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            };
            let train_notes = subset(notes, &train);
            let train_inputs = subset(inputs, &train);
            let predictor = fit(&train_notes, &train_inputs, specs, &fold_cfg)?;
            let test_notes = subset(notes, test);
            let test_inputs = subset(inputs, test);
            let records = predictor.predict_all(&test_notes, &test_inputs, specs)?;
            let report = evaluate(&records, &test_notes)?;
            log::info!("fold {i}: overall macro-F1 {:?}", report.overall_macro_f1);
            Ok(FoldResult {
                fold: i,
                train_size: train.len(),
                test_size: test.len(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mean_macro_f1 = BTreeMap::new();
    for task in TaskId::ALL {
        let scores: Vec<f64> = folds.iter().filter_map(|f| f.report.macro_f1(task)).collect();
        let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        mean_macro_f1.insert(task, mean);
    }
    let defined: Vec<f64> = mean_macro_f1.values().flatten().copied().collect();
    let overall_macro_f1 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let final_predictor = if retrain_final {
        Some(fit(notes, inputs, specs, cfg)?)
    } else {
        None
    };
    Ok(CvReport {
        folds,
        mean_macro_f1,
        overall_macro_f1,
        final_predictor,
    })
}

/// A candidate learning rate and its cross-validated overall macro-F1.
pub type LrScore = (f64, Option<f64>);

/// Picks the learning rate with the best cross-validated overall macro-F1;
/// ties go to the smaller rate. Returns the choice and every candidate's
/// score.
pub fn select_learning_rate(
    notes: &[ClinicalNote],
    inputs: &[String],
    specs: &TaskSpecs,
    cfg: &TrainConfig,
    candidates: &[f64],
    k: usize,
) -> Result<(f64, Vec<LrScore>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no learning-rate candidates".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scores = sorted
        .iter()
        .map(|&lr| {
            let c = TrainConfig {
                learning_rate: lr,
                ..cfg.clone()
            };
            Ok((lr, run_cv(notes, inputs, specs, &c, k, false)?.overall_macro_f1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = scores[0];
    for &(lr, s) in &scores[1..] {
        if s.unwrap_or(f64::NEG_INFINITY) > best.1.unwrap_or(f64::NEG_INFINITY) {
            best = (lr, s);
        }
    }
    Ok((best.0, scores))
}
