//! Notes, the fixed label schema, JSONL ingestion, corpus statistics and
//! train/test splitting.

mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::Tokenizer;

pub use synthetic::{
    audit_labels, generate_synthetic, DistractorPrefix, SyntheticProfile, TABLE1_TRAIN_COUNTS,
};

/// The five menstrual attributes. Declaration order is the canonical task
/// order used everywhere (reports, prompts, serialization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Dysmenorrhea,
    DysmenorrheaSeverity,
    Regularity,
    Flow,
    IntermenstrualBleeding,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::Dysmenorrhea,
        TaskId::DysmenorrheaSeverity,
        TaskId::Regularity,
        TaskId::Flow,
        TaskId::IntermenstrualBleeding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Dysmenorrhea => "dysmenorrhea",
            TaskId::DysmenorrheaSeverity => "dysmenorrhea_severity",
            TaskId::Regularity => "regularity",
            TaskId::Flow => "flow",
            TaskId::IntermenstrualBleeding => "intermenstrual_bleeding",
        }
    }

    /// Human-readable name, e.g. "dysmenorrhea severity".
    pub fn display_name(self) -> &'static str {
        match self {
            TaskId::Dysmenorrhea => "dysmenorrhea",
            TaskId::DysmenorrheaSeverity => "dysmenorrhea severity",
            TaskId::Regularity => "regularity",
            TaskId::Flow => "flow",
            TaskId::IntermenstrualBleeding => "intermenstrual bleeding",
        }
    }

    /// The task's label set, in canonical order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            TaskId::Dysmenorrhea => &["yes", "no", "unknown"],
            TaskId::DysmenorrheaSeverity => &["mild", "moderate", "severe", "unknown"],
            TaskId::Regularity => &["regular", "irregular", "unknown"],
            TaskId::Flow => &["scanty", "normal", "abundant", "unknown"],
            TaskId::IntermenstrualBleeding => &["yes", "no", "unknown"],
        }
    }

    pub fn label_index(self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| *l == label)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn validate_label(self, value: &str) -> Result<()> {
        match self.label_index(value) {
            Some(_) => Ok(()),
            None => Err(Error::UnknownLabel {
                task: self,
                value: value.to_string(),
            }),
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Gold labels of one note. An absent key means "not annotated", which is
/// different from the annotated class "unknown".
pub type LabelMap = BTreeMap<TaskId, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelMap>,
}

impl ClinicalNote {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        ClinicalNote {
            id: id.into(),
            text: text.into(),
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: LabelMap) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn gold(&self, task: TaskId) -> Option<&str> {
        self.labels.as_ref()?.get(&task).map(String::as_str)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNote {
    id: String,
    text: String,
    #[serde(default)]
    labels: Option<BTreeMap<String, String>>,
}

fn validate_labels(raw: BTreeMap<String, String>) -> Result<LabelMap> {
    raw.into_iter()
        .map(|(task, value)| {
            let task: TaskId = task.parse()?;
            task.validate_label(&value)?;
            Ok((task, value))
        })
        .collect()
}

/// Parses notes from JSONL text. `origin` only labels error messages.
pub fn parse_notes(origin: &Path, content: &str, require_labels: bool) -> Result<Vec<ClinicalNote>> {
    let mut notes = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawNote = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            path: origin.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let at_line = |e: Error| Error::MalformedLine {
            path: origin.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        };
        if raw.id.is_empty() {
            return Err(at_line(Error::EmptyId));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(at_line(Error::DuplicateId(raw.id)));
        }
        let labels = raw.labels.map(validate_labels).transpose().map_err(at_line)?;
        if require_labels && labels.is_none() {
            return Err(at_line(Error::MissingLabels(raw.id)));
        }
        notes.push(ClinicalNote {
            id: raw.id,
            text: raw.text,
            labels,
        });
    }
    Ok(notes)
}

pub fn load_notes(path: impl AsRef<Path>, require_labels: bool) -> Result<Vec<ClinicalNote>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_notes(path, &content, require_labels)
}

pub fn write_notes(path: impl AsRef<Path>, notes: &[ClinicalNote]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for note in notes {
        serde_json::to_writer(&mut out, note)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBucket {
    /// Inclusive lower bound in tokens.
    pub lower: usize,
    /// Exclusive upper bound in tokens.
    pub upper: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenSummary {
    pub min: usize,
    pub median: f64,
    pub max: usize,
    pub histogram: Vec<HistogramBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub notes: usize,
    /// task -> label -> count, labels in canonical order.
    pub label_counts: BTreeMap<TaskId, Vec<(String, usize)>>,
    /// None for an empty corpus.
    pub tokens: Option<TokenSummary>,
}

impl CorpusStats {
    pub fn count(&self, task: TaskId, label: &str) -> usize {
        self.label_counts[&task]
            .iter()
            .find(|(l, _)| l == label)
            .map_or(0, |(_, c)| *c)
    }

    pub fn annotated(&self, task: TaskId) -> usize {
        self.label_counts[&task].iter().map(|(_, c)| c).sum()
    }
}

pub const DEFAULT_HISTOGRAM_WIDTH: usize = 100;

pub fn dataset_stats(notes: &[ClinicalNote], tokenizer: &Tokenizer) -> CorpusStats {
    let lengths: Vec<usize> = notes.iter().map(|n| tokenizer.count(&n.text)).collect();
    stats_with_lengths(notes, &lengths, DEFAULT_HISTOGRAM_WIDTH)
}

/// Label counts plus a token-length summary over externally supplied
/// lengths (e.g. retrieved-text lengths).
pub fn stats_with_lengths(notes: &[ClinicalNote], lengths: &[usize], bucket_width: usize) -> CorpusStats {
    let mut label_counts = BTreeMap::new();
    for task in TaskId::ALL {
        let counts = task
            .labels()
            .iter()
            .map(|label| {
                let c = notes.iter().filter(|n| n.gold(task) == Some(label)).count();
                (label.to_string(), c)
            })
            .collect();
        label_counts.insert(task, counts);
    }
    CorpusStats {
        notes: notes.len(),
        label_counts,
        tokens: summarize_lengths(lengths, bucket_width),
    }
}

pub fn summarize_lengths(lengths: &[usize], bucket_width: usize) -> Option<TokenSummary> {
    if lengths.is_empty() {
        return None;
    }
    let width = bucket_width.max(1);
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let max = sorted[n - 1];
    let mut histogram: Vec<HistogramBucket> = (0..=max / width)
        .map(|b| HistogramBucket {
            lower: b * width,
            upper: (b + 1) * width,
            count: 0,
        })
        .collect();
    for len in &sorted {
        histogram[len / width].count += 1;
    }
    Some(TokenSummary {
        min: sorted[0],
        median,
        max,
        histogram,
    })
}

/// Seeded split; the train side gets `round_half_up(ratio * N)` notes. Both
/// halves keep the input order.
pub fn split_train_test(
    notes: &[ClinicalNote],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<ClinicalNote>, Vec<ClinicalNote>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n = notes.len();
    let train_n = ((ratio * n as f64) + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..train_n.min(n)] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = notes
        .iter()
        .cloned()
        .zip(in_train)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(n, _)| n).collect(),
        test.into_iter().map(|(n, _)| n).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(content: &str) -> Result<Vec<ClinicalNote>> {
        parse_notes(Path::new("notes.jsonl"), content, false)
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn single_labelled_line() {
        let notes =
            parse(r#"{"id":"a","text":"Menses are regular","labels":{"regularity":"regular"}}"#)
                .unwrap();
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].labels.as_ref().unwrap().len(), 1);
        assert_eq!(notes[0].gold(TaskId::Regularity), Some("regular"));
        assert_eq!(notes[0].gold(TaskId::Flow), None);
    }

    #[test]
    fn out_of_vocabulary_label_is_rejected() {
        let err = parse(r#"{"id":"a","text":"x","labels":{"flow":"heavy"}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown label 'heavy' for task flow"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse("{\"id\":\"a\",\"text\":\"x\"}\n{not json}\n").unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = parse("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}").unwrap_err();
        assert!(err.to_string().contains("duplicate note id 'a'"));
    }

    #[test]
    fn unknown_task_key_is_rejected() {
        let err = parse(r#"{"id":"a","text":"x","labels":{"pain":"yes"}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown task 'pain'"));
    }

    #[test]
    fn require_labels_rejects_unlabelled_notes() {
        let err = parse_notes(Path::new("n"), r#"{"id":"a","text":"x"}"#, true).unwrap_err();
        assert!(err.to_string().contains("no gold labels"));
        // an empty map is still a gold map
        parse_notes(Path::new("n"), r#"{"id":"a","text":"x","labels":{}}"#, true).unwrap();
    }

    #[test]
    fn empty_id_is_rejected() {
        assert!(parse(r#"{"id":"","text":"x"}"#).is_err());
    }

    #[test]
    fn stats_of_nothing() {
        let stats = dataset_stats(&[], &Tokenizer);
        assert_eq!(stats.notes, 0);
        for task in TaskId::ALL {
            assert_eq!(stats.annotated(task), 0);
        }
        assert!(stats.tokens.is_none());
    }

    #[test]
    fn stats_median_and_histogram() {
        let s = summarize_lengths(&[5, 250, 120, 99], 100).unwrap();
        assert_eq!((s.min, s.max), (5, 250));
        assert_eq!(s.median, 109.5);
        let counts: Vec<_> = s.histogram.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 1, 1]);
    }

    #[test]
    fn split_paper_sizes() {
        let notes: Vec<_> = (0..140).map(|i| ClinicalNote::new(format!("n{i}"), "")).collect();
        let (train, test) = split_train_test(&notes, 0.65, 1).unwrap();
        assert_eq!((train.len(), test.len()), (91, 49));
    }

    #[test]
    fn split_single_note_rounds_half_up() {
        let notes = vec![ClinicalNote::new("only", "")];
        let (train, test) = split_train_test(&notes, 0.65, 3).unwrap();
        assert_eq!((train.len(), test.len()), (1, 0));
        let (train, test) = split_train_test(&notes, 0.5, 3).unwrap();
        assert_eq!((train.len(), test.len()), (1, 0));
        let (train, test) = split_train_test(&notes, 0.49, 3).unwrap();
        assert_eq!((train.len(), test.len()), (0, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let notes: Vec<_> = (0..30).map(|i| ClinicalNote::new(format!("n{i}"), "")).collect();
        let a = split_train_test(&notes, 0.65, 9).unwrap();
        let b = split_train_test(&notes, 0.65, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_degenerate_ratio() {
        assert!(split_train_test(&[], 0.0, 1).is_err());
        assert!(split_train_test(&[], 1.0, 1).is_err());
    }
}
