//! Confusion matrices, per-label precision/recall/F1, macro-F1 and
//! run-versus-run delta tables.
//!
//! Macro-F1 averages only over labels that occur in the gold data; a label
//! that is never the gold answer contributes nothing, even if predicted.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ClinicalNote, TaskId};
use crate::error::{Error, Result};

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predictions: BTreeMap<TaskId, String>,
    #[serde(default)]
    pub probabilities: BTreeMap<TaskId, BTreeMap<String, f64>>,
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            for (task, label) in &rec.predictions {
                task.validate_label(label)?;
            }
            Ok(rec)
        })
        .collect()
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub task: TaskId,
    /// `counts[gold][predicted]`, indexed by the task's label order.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(task: TaskId) -> Self {
        let n = task.labels().len();
        ConfusionMatrix {
            task,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_pairs(task: TaskId, gold: &[&str], pred: &[&str]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::InvalidInput(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                pred.len()
            )));
        }
        let index = |label: &str| {
            task.label_index(label).ok_or_else(|| Error::UnknownLabel {
                task,
                value: label.to_string(),
            })
        };
        let mut m = ConfusionMatrix::new(task);
        for (g, p) in gold.iter().zip(pred) {
            m.counts[index(g)?][index(p)?] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn transpose(&self) -> Self {
        let n = self.counts.len();
        ConfusionMatrix {
            task: self.task,
            counts: (0..n).map(|p| (0..n).map(|g| self.counts[g][p]).collect()).collect(),
        }
    }

    pub fn label_metrics(&self) -> Vec<LabelMetrics> {
        let n = self.counts.len();
        (0..n)
            .map(|i| {
                let tp = self.counts[i][i];
                let support: usize = self.counts[i].iter().sum();
                let predicted: usize = (0..n).map(|g| self.counts[g][i]).sum();
                let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                LabelMetrics {
                    label: self.task.labels()[i].to_string(),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect()
    }

    /// Mean F1 over labels with gold support; `None` without any support.
    pub fn macro_f1(&self) -> Option<f64> {
        let supported: Vec<f64> = self
            .label_metrics()
            .into_iter()
            .filter(|m| m.support > 0)
            .map(|m| m.f1)
            .collect();
        if supported.is_empty() {
            None
        } else {
            Some(supported.iter().sum::<f64>() / supported.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn macro_f1(task: TaskId, gold: &[&str], pred: &[&str]) -> Result<Option<f64>> {
    Ok(ConfusionMatrix::from_pairs(task, gold, pred)?.macro_f1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskId,
    /// Empty for summary-only reports.
    #[serde(default)]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default)]
    pub per_label: Vec<LabelMetrics>,
    /// `None` means no gold support for this task.
    pub macro_f1: Option<f64>,
}

impl TaskReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        TaskReport {
            task: confusion.task,
            per_label: confusion.label_metrics(),
            macro_f1: confusion.macro_f1(),
            confusion: Some(confusion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<TaskId, TaskReport>,
    /// Mean of the per-task macro-F1 values that are defined.
    pub overall_macro_f1: Option<f64>,
}

impl EvalReport {
    pub fn from_task_reports(tasks: BTreeMap<TaskId, TaskReport>) -> Self {
        let defined: Vec<f64> = tasks.values().filter_map(|t| t.macro_f1).collect();
        let overall_macro_f1 =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        EvalReport {
            tasks,
            overall_macro_f1,
        }
    }

    /// A report carrying only macro-F1 values, e.g. transcribed results.
    pub fn from_macro_scores(scores: &[(TaskId, f64)]) -> Self {
        Self::from_task_reports(
            scores
                .iter()
                .map(|&(task, f1)| {
                    (
                        task,
                        TaskReport {
                            task,
                            confusion: None,
                            per_label: Vec::new(),
                            macro_f1: Some(f1),
                        },
                    )
                })
                .collect(),
        )
    }

    pub fn macro_f1(&self, task: TaskId) -> Option<f64> {
        self.tasks.get(&task).and_then(|t| t.macro_f1)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&json)?)
    }

    /// Aligned plain-text table: one row per task, then the overall mean.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<26} {:>9}  per-label F1", "task", "macro-F1");
        for (task, report) in &self.tasks {
            let per_label = report
                .per_label
                .iter()
                .filter(|m| m.support > 0)
                .map(|m| format!("{}={:.3}(n={})", m.label, m.f1, m.support))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(out, "{:<26} {:>9}  {}", task.as_str(), fmt_score(report.macro_f1), per_label);
        }
        let _ = writeln!(out, "{:<26} {:>9}", "overall", fmt_score(self.overall_macro_f1));
        out
    }

    /// `task,macro_f1` rows for external plotting.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("task,macro_f1\n");
        for (task, report) in &self.tasks {
            let v = report.macro_f1.map(|f| format!("{f:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{task},{v}");
        }
        let v = self.overall_macro_f1.map(|f| format!("{f:.6}")).unwrap_or_default();
        let _ = writeln!(out, "overall,{v}");
        out
    }
}

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "no support".to_string(), |v| format!("{v:.3}"))
}

/// Scores predictions against gold notes. Notes without gold for a task are
/// skipped for that task only; a prediction for an id absent from the gold
/// set is an error.
pub fn evaluate(predictions: &[PredictionRecord], gold: &[ClinicalNote]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &ClinicalNote> = gold.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut pairs: BTreeMap<TaskId, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for rec in predictions {
        let note = by_id.get(rec.id.as_str()).ok_or_else(|| {
            Error::InvalidInput(format!("prediction for '{}' has no gold note", rec.id))
        })?;
        for (task, pred) in &rec.predictions {
            if let Some(g) = note.gold(*task) {
                let entry = pairs.entry(*task).or_default();
                entry.0.push(g);
                entry.1.push(pred.as_str());
            }
        }
    }
    let mut tasks = BTreeMap::new();
    for task in TaskId::ALL {
        let (g, p) = pairs.remove(&task).unwrap_or_default();
        tasks.insert(task, TaskReport::from_confusion(ConfusionMatrix::from_pairs(task, &g, &p)?));
    }
    Ok(EvalReport::from_task_reports(tasks))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub task: Option<TaskId>,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
    pub overall: Option<DeltaRow>,
}

/// Signed three-decimal delta, e.g. `+0.260`, `-0.057`, `±0.000`.
pub fn format_delta(delta: f64) -> String {
    let rounded = (delta * 1000.0).round() / 1000.0;
    if rounded == 0.0 {
        "\u{b1}0.000".to_string()
    } else if rounded > 0.0 {
        format!("+{rounded:.3}")
    } else {
        format!("{rounded:.3}")
    }
}

impl DeltaRow {
    pub fn formatted(&self) -> String {
        format_delta(self.delta)
    }
}

impl DeltaTable {
    pub fn row(&self, task: TaskId) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.task == Some(task))
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<26} {:>7} {:>7} {:>9}", "task", "a", "b", "delta");
        for r in self.rows.iter().chain(&self.overall) {
            let name = r.task.map_or("overall", TaskId::as_str);
            let _ = writeln!(out, "{:<26} {:>7.3} {:>7.3} {:>9}", name, r.a, r.b, format!("({})", r.formatted()));
        }
        out
    }
}

/// Per-task and overall deltas `b − a`. Both reports must score the same
/// tasks.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<DeltaTable> {
    let scored = |r: &EvalReport| -> Vec<TaskId> {
        r.tasks.iter().filter(|(_, t)| t.macro_f1.is_some()).map(|(t, _)| *t).collect()
    };
    let (ta, tb) = (scored(a), scored(b));
    if ta != tb {
        return Err(Error::InvalidInput(format!(
            "reports score different tasks: {ta:?} vs {tb:?}"
        )));
    }
    let rows = ta
        .iter()
        .map(|&task| {
            let (x, y) = (a.macro_f1(task).unwrap(), b.macro_f1(task).unwrap());
            DeltaRow {
                task: Some(task),
                a: x,
                b: y,
                delta: y - x,
            }
        })
        .collect();
    let overall = match (a.overall_macro_f1, b.overall_macro_f1) {
        (Some(x), Some(y)) => Some(DeltaRow {
            task: None,
            a: x,
            b: y,
            delta: y - x,
        }),
        _ => None,
    };
    Ok(DeltaTable { rows, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent recount of per-label TP/FP/FN.
    fn brute_macro_f1(gold: &[&str], pred: &[&str], labels: &[&str]) -> Option<f64> {
        let mut f1s = Vec::new();
        for l in labels {
            let support = gold.iter().filter(|g| *g == l).count();
            if support == 0 {
                continue;
            }
            let tp = gold.iter().zip(pred).filter(|(g, p)| *g == l && *p == l).count() as f64;
            let fp = gold.iter().zip(pred).filter(|(g, p)| *g != l && *p == l).count() as f64;
            let fn_ = gold.iter().zip(pred).filter(|(g, p)| *g == l && *p != l).count() as f64;
            let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let r = tp / (tp + fn_);
            f1s.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64)
    }

    #[test]
    fn perfect_predictions() {
        let g = ["regular", "irregular", "unknown", "regular"];
        assert_eq!(macro_f1(TaskId::Regularity, &g, &g).unwrap(), Some(1.0));
    }

    #[test]
    fn hand_computed_seven_ninths() {
        let gold = ["regular", "regular", "irregular", "unknown"];
        let pred = ["regular", "irregular", "irregular", "unknown"];
        let f = macro_f1(TaskId::Regularity, &gold, &pred).unwrap().unwrap();
        assert_eq!(f, (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0);
        assert!((f - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn unsupported_labels_are_excluded() {
        let g = ["no", "no", "no"];
        assert_eq!(macro_f1(TaskId::IntermenstrualBleeding, &g, &g).unwrap(), Some(1.0));
        assert_eq!(macro_f1(TaskId::IntermenstrualBleeding, &[], &[]).unwrap(), None);
    }

    #[test]
    fn errors() {
        assert!(macro_f1(TaskId::Flow, &["normal"], &[]).is_err());
        assert!(macro_f1(TaskId::Flow, &["heavy"], &["normal"]).is_err());
    }

    #[test]
    fn single_note_all_correct() {
        let labels: BTreeMap<TaskId, String> = TaskId::ALL
            .iter()
            .map(|t| (*t, t.labels()[0].to_string()))
            .collect();
        let note = ClinicalNote::new("a", "").with_labels(labels.clone());
        let pred = PredictionRecord {
            id: "a".into(),
            predictions: labels,
            probabilities: BTreeMap::new(),
        };
        let report = evaluate(&[pred], &[note]).unwrap();
        for t in TaskId::ALL {
            assert_eq!(report.macro_f1(t), Some(1.0));
        }
        assert_eq!(report.overall_macro_f1, Some(1.0));
    }

    #[test]
    fn no_overlapping_tasks_means_no_support() {
        let note = ClinicalNote::new("a", "").with_labels(
            [(TaskId::Flow, "normal".to_string())].into_iter().collect(),
        );
        let pred = PredictionRecord {
            id: "a".into(),
            predictions: [(TaskId::Regularity, "regular".to_string())].into_iter().collect(),
            probabilities: BTreeMap::new(),
        };
        let report = evaluate(&[pred], &[note]).unwrap();
        assert!(report.tasks.values().all(|t| t.macro_f1.is_none()));
        assert_eq!(report.overall_macro_f1, None);
        assert!(report.render_table().contains("no support"));
    }

    #[test]
    fn unknown_prediction_id_is_an_error() {
        let pred = PredictionRecord {
            id: "ghost".into(),
            predictions: BTreeMap::new(),
            probabilities: BTreeMap::new(),
        };
        assert!(evaluate(&[pred], &[]).is_err());
    }

    #[test]
    fn equal_reports_have_zero_deltas() {
        let r = EvalReport::from_macro_scores(&[(TaskId::Flow, 0.5), (TaskId::Regularity, 0.7)]);
        let d = compare_runs(&r, &r).unwrap();
        assert!(d.rows.iter().all(|r| r.delta == 0.0));
        assert_eq!(d.rows[0].formatted(), "\u{b1}0.000");
    }

    #[test]
    fn mismatched_task_sets_are_rejected() {
        let a = EvalReport::from_macro_scores(&[(TaskId::Flow, 0.5)]);
        let b = EvalReport::from_macro_scores(&[(TaskId::Regularity, 0.5)]);
        assert!(compare_runs(&a, &b).is_err());
    }

    #[test]
    fn delta_formatting() {
        assert_eq!(format_delta(0.900 - 0.640), "+0.260");
        assert_eq!(format_delta(0.442 - 0.499), "-0.057");
        assert_eq!(format_delta(0.0004), "\u{b1}0.000");
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_permutation_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 0..40),
            rot in 0usize..40,
        ) {
            let labels = TaskId::Flow.labels();
            let gold: Vec<&str> = pairs.iter().map(|(g, _)| labels[*g]).collect();
            let pred: Vec<&str> = pairs.iter().map(|(_, p)| labels[*p]).collect();
            let f = macro_f1(TaskId::Flow, &gold, &pred).unwrap();
            prop_assert_eq!(f, brute_macro_f1(&gold, &pred, labels));
            if let Some(f) = f {
                prop_assert!((0.0..=1.0).contains(&f));
            }

            let mut rotated: Vec<(&str, &str)> = gold.iter().copied().zip(pred.iter().copied()).collect();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
            }
            let (g2, p2): (Vec<&str>, Vec<&str>) = rotated.into_iter().unzip();
            let f2 = macro_f1(TaskId::Flow, &g2, &p2).unwrap();
            match (f, f2) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }

            let m = ConfusionMatrix::from_pairs(TaskId::Flow, &gold, &pred).unwrap();
            let swapped = ConfusionMatrix::from_pairs(TaskId::Flow, &pred, &gold).unwrap();
            prop_assert_eq!(m.transpose(), swapped);
            prop_assert_eq!(m.total(), gold.len());
        }
    }
}
