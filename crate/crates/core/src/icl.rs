//! Few-shot prompting baseline against an external generative HTTP service.
//!
//! The prompt shows a handful of fully labelled notes and asks for five
//! `task: label` lines about the query note. Answers are parsed strictly:
//! only exact label strings count, anything else becomes "unknown" with a
//! warning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClinicalNote, LabelMap, TaskId};
use crate::error::{Error, Result};
use crate::evaluation::PredictionRecord;
use crate::prompting::{TaskSpecs, Tokenizer, MASK_TOKEN};

pub const ANSWER_INSTRUCTION: &str = "Answer with exactly five lines 'task: label'.";
pub const DEFAULT_MAX_TOKENS: u32 = 64;

const PREAMBLE: &str = "You extract menstrual health attributes from clinical notes. \
For each note give one label per attribute from these choices:";

/// Three invented notes used when no shots file is given. They are
/// synthetic and are not taken from any real record.
pub fn default_shots() -> Vec<ClinicalNote> {
    let shot = |id: &str, text: &str, labels: [&str; 5]| {
        let map: LabelMap = TaskId::ALL
            .into_iter()
            .zip(labels)
            .map(|(t, l)| (t, l.to_string()))
            .collect();
        ClinicalNote::new(id, text).with_labels(map)
    };
    vec![
        shot(
            "synthetic-shot-1",
            "Patient reports cramping with menses that is moderate and relieved by ibuprofen. \
             Cycles every 28 days. Flow heavy on the first two days. No bleeding between periods.",
            ["yes", "moderate", "regular", "abundant", "no"],
        ),
        shot(
            "synthetic-shot-2",
            "Follow up for thyroid medication. Periods come every 3 to 8 weeks and are light. \
             Denies pelvic pain. Reports occasional spotting mid cycle.",
            ["no", "unknown", "irregular", "scanty", "yes"],
        ),
        shot(
            "synthetic-shot-3",
            "Annual exam. Menstrual history not discussed today. Blood pressure normal. \
             Counselled on diet and exercise.",
            ["unknown", "unknown", "unknown", "unknown", "unknown"],
        ),
    ]
}

/// A rendered few-shot prompt. `text` is what gets sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotPrompt {
    pub text: String,
    pub n_examples: usize,
}

fn label_lines(out: &mut String, labels: impl Fn(TaskId) -> String) {
    for task in TaskId::ALL {
        let _ = writeln!(out, "{}: {}", task.display_name(), labels(task));
    }
}

/// Renders preamble, examples in the given order, the answer instruction
/// and the query. Every example must carry a valid label for all five tasks.
pub fn build_fewshot_prompt(examples: &[ClinicalNote], query_text: &str) -> Result<FewShotPrompt> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("a few-shot prompt needs at least one example".into()));
    }
    for ex in examples {
        for task in TaskId::ALL {
            let label = ex.gold(task).ok_or_else(|| {
                Error::InvalidInput(format!("example '{}' has no label for task {task}", ex.id))
            })?;
            task.validate_label(label)?;
        }
    }
    let mut text = String::from(PREAMBLE);
    text.push('\n');
    for task in TaskId::ALL {
        let _ = writeln!(text, "- {}: {}", task.display_name(), task.labels().join(", "));
    }
    for (i, ex) in examples.iter().enumerate() {
        let _ = write!(text, "\nExample {}\nNote: {}\n", i + 1, ex.text.trim());
        label_lines(&mut text, |t| ex.gold(t).unwrap_or_default().to_string());
    }
    let _ = write!(text, "\n{ANSWER_INSTRUCTION}\nNote: {}\n", query_text.trim());
    Ok(FewShotPrompt {
        text,
        n_examples: examples.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Also accept a verbalizer word when it points to exactly one label.
    #[serde(default)]
    pub lenient: bool,
}

/// Labels for all five tasks plus what went wrong while parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedPrediction {
    pub labels: BTreeMap<TaskId, String>,
    pub warnings: Vec<String>,
}

impl ParsedPrediction {
    pub fn into_record(self, id: &str) -> PredictionRecord {
        PredictionRecord {
            id: id.to_string(),
            predictions: self.labels,
            probabilities: BTreeMap::new(),
        }
    }
}

fn normalize_key(key: &str) -> String {
    let key = key.trim().trim_start_matches(|c: char| c == '-' || c == '*' || c == '#' || c.is_whitespace());
    key.to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalize_value(value: &str) -> String {
    value
        .trim()
        .trim_matches(|c: char| matches!(c, '.' | '"' | '\'' | '*' | '`') || c.is_whitespace())
        .to_lowercase()
}

/// Names a task may appear under: its identifier, its display name and the
/// field name of its template trigger.
fn task_names(specs: &TaskSpecs) -> Vec<(String, TaskId)> {
    let mut names = Vec::new();
    for task in TaskId::ALL {
        names.push((normalize_key(task.as_str()), task));
        names.push((normalize_key(task.display_name()), task));
        let trigger = specs.get(task).template_trigger.replace(MASK_TOKEN, "");
        names.push((normalize_key(trigger.trim_end().trim_end_matches(':')), task));
    }
    names.sort();
    names.dedup();
    names
}

fn lenient_label(specs: &TaskSpecs, task: TaskId, value: &str) -> Option<&'static str> {
    let spec = specs.get(task);
    let mut hit: Option<usize> = None;
    for token in Tokenizer.tokenize(value) {
        if let Some(i) = spec.verbalizer.iter().position(|ws| ws.contains(&token)) {
            if hit.is_some_and(|h| h != i) {
                return None;
            }
            hit = Some(i);
        }
    }
    hit.map(|i| task.labels()[i])
}

/// Reads `task: value` lines, case-insensitively. The first answer for a
/// task wins. Lines that name no task are ignored; each task without a
/// usable answer gets "unknown" and exactly one warning.
pub fn parse_response(text: &str, specs: &TaskSpecs, opts: ParseOptions) -> ParsedPrediction {
    let names = task_names(specs);
    let mut found: BTreeMap<TaskId, std::result::Result<&'static str, String>> = BTreeMap::new();
    for line in text.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = normalize_key(key);
        let Some(&(_, task)) = names.iter().find(|(n, _)| *n == key) else {
            continue;
        };
        if found.contains_key(&task) {
            continue;
        }
        let value = normalize_value(value);
        let label = task
            .labels()
            .iter()
            .find(|l| **l == value)
            .copied()
            .or_else(|| opts.lenient.then(|| lenient_label(specs, task, &value)).flatten());
        found.insert(task, label.ok_or(value));
    }
    let mut labels = BTreeMap::new();
    let mut warnings = Vec::new();
    for task in TaskId::ALL {
        let label = match found.remove(&task) {
            Some(Ok(l)) => l,
            Some(Err(v)) => {
                warnings.push(format!("{task}: '{v}' is not one of {:?}", task.labels()));
                "unknown"
            }
            None => {
                warnings.push(format!("{task}: no answer line"));
                "unknown"
            }
        };
        labels.insert(task, label.to_string());
    }
    ParsedPrediction { labels, warnings }
}

#[derive(Serialize)]
pub(crate) struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub max_tokens: u32,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct GenerateResponse {
    pub text: String,
}

/// Client for `POST /generate`. No retries.
#[derive(Debug, Clone)]
pub struct GenerateClient {
    endpoint: String,
    pub max_tokens: u32,
    agent: ureq::Agent,
}

impl GenerateClient {
    pub fn new(base_url: &str) -> Self {
        let base = base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/generate") {
            base.to_string()
        } else {
            format!("{base}/generate")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        GenerateClient {
            endpoint,
            max_tokens: DEFAULT_MAX_TOKENS,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Transport failures, non-2xx statuses, undecodable bodies and empty
    /// text all come back as `Error::Remote`.
    pub fn generate(&self, prompt: &str) -> Result<String> {
        let fail = |msg: String| Error::Remote(format!("{}: {msg}", self.endpoint));
        let response: GenerateResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(GenerateRequest {
                prompt,
                max_tokens: self.max_tokens,
            })
            .map_err(|e| fail(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| fail(format!("bad response body: {e}")))?;
        if response.text.trim().is_empty() {
            return Err(fail("empty response".into()));
        }
        Ok(response.text)
    }
}

pub fn icl_predict(
    client: &GenerateClient,
    prompt: &FewShotPrompt,
    specs: &TaskSpecs,
    opts: ParseOptions,
) -> Result<ParsedPrediction> {
    Ok(parse_response(&client.generate(&prompt.text)?, specs, opts))
}

/// Predicts every note with at most `max_concurrency` requests in flight.
/// Output order equals input order. Parse warnings are logged.
pub fn icl_predict_all(
    client: &GenerateClient,
    shots: &[ClinicalNote],
    notes: &[ClinicalNote],
    specs: &TaskSpecs,
    opts: ParseOptions,
    max_concurrency: usize,
) -> Result<Vec<PredictionRecord>> {
    if max_concurrency == 0 {
        return Err(Error::InvalidConfig("max_concurrency must be at least 1".into()));
    }
    let prompts = notes
        .iter()
        .map(|n| build_fewshot_prompt(shots, &n.text))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_concurrency)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        notes
            .par_iter()
            .zip(prompts.par_iter())
            .map(|(n, p)| {
                let parsed = icl_predict(client, p, specs, opts)?;
                for w in &parsed.warnings {
                    log::warn!("note {}: {w}", n.id);
                }
                Ok(parsed.into_record(&n.id))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ParsedPrediction {
        parse_response(text, &TaskSpecs::default(), ParseOptions::default())
    }

    #[test]
    fn default_prompt_has_fifteen_example_lines() {
        let p = build_fewshot_prompt(&default_shots(), "Query note.").unwrap();
        assert_eq!(p.n_examples, 3);
        let before_query = p.text.split(ANSWER_INSTRUCTION).next().unwrap();
        let label_lines = before_query
            .lines()
            .filter(|l| !l.starts_with("- ") && TaskId::ALL.iter().any(|t| l.starts_with(&format!("{}: ", t.display_name()))))
            .count();
        assert_eq!(label_lines, 15);
        assert!(p.text.ends_with("Note: Query note.\n"));
        assert_eq!(p, build_fewshot_prompt(&default_shots(), "Query note.").unwrap());
    }

    #[test]
    fn prompt_errors() {
        assert!(build_fewshot_prompt(&[], "q").is_err());
        let mut shot = default_shots().remove(0);
        shot.labels.as_mut().unwrap().remove(&TaskId::Flow);
        let err = build_fewshot_prompt(&[shot], "q").unwrap_err().to_string();
        assert!(err.contains("flow"), "{err}");
    }

    #[test]
    fn well_formed_answer() {
        let p = parse(
            "dysmenorrhea: yes\ndysmenorrhea severity: mild\nregularity: regular\nflow: normal\nintermenstrual bleeding: no",
        );
        assert!(p.warnings.is_empty());
        let got: Vec<&str> = p.labels.values().map(String::as_str).collect();
        assert_eq!(got, ["yes", "mild", "regular", "normal", "no"]);
    }

    #[test]
    fn verbalizer_word_is_not_a_label() {
        let p = parse("FLOW: Heavy bleeding noted");
        assert_eq!(p.labels[&TaskId::Flow], "unknown");
        assert!(p.warnings.iter().any(|w| w.starts_with("flow:")));
        assert_eq!(p.warnings.len(), 5);

        let lenient = parse_response(
            "FLOW: Heavy bleeding noted",
            &TaskSpecs::default(),
            ParseOptions { lenient: true },
        );
        assert_eq!(lenient.labels[&TaskId::Flow], "abundant");
        assert_eq!(lenient.warnings.len(), 4);
    }

    #[test]
    fn garbage_gives_five_unknowns() {
        let p = parse("I cannot help with that.\n\n???");
        assert!(p.labels.values().all(|l| l == "unknown"));
        assert_eq!(p.labels.len(), 5);
        assert_eq!(p.warnings.len(), 5);
    }

    #[test]
    fn synonyms_and_case() {
        let p = parse(
            "Dysmenorrhea_Severity: SEVERE.\n- Intermenstrual-Bleeding: Yes\nPeriod pattern: irregular\nbleeding pattern: scanty\ndysmenorrhea: no\ndysmenorrhea: yes",
        );
        assert!(p.warnings.is_empty(), "{:?}", p.warnings);
        assert_eq!(p.labels[&TaskId::DysmenorrheaSeverity], "severe");
        assert_eq!(p.labels[&TaskId::IntermenstrualBleeding], "yes");
        assert_eq!(p.labels[&TaskId::Regularity], "irregular");
        assert_eq!(p.labels[&TaskId::Dysmenorrhea], "no");
    }

    #[test]
    fn lenient_ambiguity_stays_unknown() {
        // "light" is a scanty word for flow, "regular" a normal word.
        let p = parse_response("flow: light but regular", &TaskSpecs::default(), ParseOptions { lenient: true });
        assert_eq!(p.labels[&TaskId::Flow], "unknown");
    }
}
