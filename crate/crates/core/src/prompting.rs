//! Tokenization, vocabularies, cloze templates and verbalizers.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskId;
use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "[MASK]";
pub const OOV_TOKEN: &str = "[OOV]";

/// Default templates and verbalizers, one entry per task.
pub const DEFAULT_TASKS_JSON: &str = include_str!("tasks.json");

/// Lowercasing tokenizer: a token is a maximal alphanumeric run or a single
/// punctuation/symbol character. Whitespace only separates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tokenizer;

impl Tokenizer {
    /// Byte spans of the tokens of `text`.
    pub fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut run_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                run_start.get_or_insert(i);
                continue;
            }
            if let Some(s) = run_start.take() {
                spans.push((s, i));
            }
            if !c.is_whitespace() {
                spans.push((i, i + c.len_utf8()));
            }
        }
        if let Some(s) = run_start {
            spans.push((s, text.len()));
        }
        spans
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.spans(text)
            .into_iter()
            .map(|(a, b)| text[a..b].to_lowercase())
            .collect()
    }

    pub fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }

    /// Tokenizes a template, turning each literal `[MASK]` into the mask
    /// token. Raw note text never goes through this path.
    fn tokenize_template(&self, template: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (i, part) in template.split(MASK_TOKEN).enumerate() {
            if i > 0 {
                out.push(MASK_TOKEN.to_string());
            }
            out.extend(self.tokenize(part));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token '{t}'")));
            }
        }
        if !index.contains_key(OOV_TOKEN) {
            return Err(Error::InvalidInput(format!("vocabulary lacks {OOV_TOKEN}")));
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn oov(&self) -> usize {
        self.index[OOV_TOKEN]
    }

    /// Index of `token`, or of `[OOV]` when absent.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or_else(|| self.oov())
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }
}

/// Reserved tokens, then every token in first-occurrence order over the
/// training texts, the template triggers and the label words.
pub fn build_vocabulary<'a>(texts: impl IntoIterator<Item = &'a str>, specs: &TaskSpecs) -> Vocabulary {
    let tokenizer = Tokenizer;
    let mut tokens = vec![MASK_TOKEN.to_string(), OOV_TOKEN.to_string()];
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    let mut add = |t: String, tokens: &mut Vec<String>| {
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    };
    for text in texts {
        for t in tokenizer.tokenize(text) {
            add(t, &mut tokens);
        }
    }
    for spec in specs.iter() {
        for t in tokenizer.tokenize_template(&spec.template_trigger) {
            add(t, &mut tokens);
        }
    }
    for spec in specs.iter() {
        for words in &spec.verbalizer {
            for w in words {
                add(w.clone(), &mut tokens);
            }
        }
    }
    Vocabulary::from_tokens(tokens).expect("reserved tokens present and deduplicated")
}

/// One task's template trigger and verbalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task: TaskId,
    pub labels: Vec<String>,
    /// Appended after the input text, e.g. `period pattern: [MASK]`.
    pub template_trigger: String,
    /// Label words per label, parallel to `labels`.
    pub verbalizer: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaskSpec {
    task: String,
    labels: Vec<String>,
    template_trigger: String,
    verbalizer: BTreeMap<String, Vec<String>>,
}

impl TaskSpec {
    fn from_raw(raw: RawTaskSpec) -> Result<Self> {
        let task: TaskId = raw.task.parse()?;
        let bad = |msg: String| Error::InvalidConfig(format!("task {task}: {msg}"));
        if raw.labels != task.labels() {
            return Err(bad(format!(
                "labels must be {:?}, got {:?}",
                task.labels(),
                raw.labels
            )));
        }
        let trigger = raw.template_trigger.trim_end();
        if trigger.matches(MASK_TOKEN).count() != 1 || !trigger.ends_with(&format!(": {MASK_TOKEN}")) {
            return Err(bad(format!(
                "template trigger must end in ': {MASK_TOKEN}' and contain it once, got '{}'",
                raw.template_trigger
            )));
        }
        if let Some(extra) = raw.verbalizer.keys().find(|k| task.label_index(k).is_none()) {
            return Err(bad(format!("verbalizer names unknown label '{extra}'")));
        }
        let tokenizer = Tokenizer;
        let mut owner: HashMap<&str, &str> = HashMap::new();
        let mut verbalizer = Vec::with_capacity(raw.labels.len());
        for label in &raw.labels {
            let words = raw
                .verbalizer
                .get(label)
                .filter(|w| !w.is_empty())
                .ok_or_else(|| bad(format!("label '{label}' has no label words")))?;
            for w in words {
                if tokenizer.tokenize(w) != [w.as_str()] {
                    return Err(bad(format!("label word '{w}' is not a single lowercase token")));
                }
                if let Some(prev) = owner.insert(w, label) {
                    return Err(bad(format!(
                        "label word '{w}' appears under both '{prev}' and '{label}'"
                    )));
                }
            }
            verbalizer.push(words.clone());
        }
        Ok(TaskSpec {
            task,
            labels: raw.labels,
            template_trigger: raw.template_trigger,
            verbalizer,
        })
    }

    fn to_raw(&self) -> RawTaskSpec {
        RawTaskSpec {
            task: self.task.as_str().to_string(),
            labels: self.labels.clone(),
            template_trigger: self.template_trigger.clone(),
            verbalizer: self
                .labels
                .iter()
                .cloned()
                .zip(self.verbalizer.iter().cloned())
                .collect(),
        }
    }

    pub fn words(&self, label: &str) -> Option<&[String]> {
        let i = self.task.label_index(label)?;
        Some(&self.verbalizer[i])
    }

    pub fn trigger_tokens(&self) -> Vec<String> {
        Tokenizer.tokenize_template(&self.template_trigger)
    }
}

/// Templates and verbalizers for all five tasks, indexed by task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpecs {
    specs: Vec<TaskSpec>,
}

impl TaskSpecs {
    pub fn from_json(json: &str) -> Result<Self> {
        let raw: Vec<RawTaskSpec> = serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("tasks config: {e}")))?;
        let mut slots: Vec<Option<TaskSpec>> = vec![None; TaskId::ALL.len()];
        for r in raw {
            let spec = TaskSpec::from_raw(r)?;
            let slot = &mut slots[spec.task.index()];
            if slot.is_some() {
                return Err(Error::InvalidConfig(format!("task {} configured twice", spec.task)));
            }
            *slot = Some(spec);
        }
        let specs = slots
            .into_iter()
            .zip(TaskId::ALL)
            .map(|(s, t)| s.ok_or_else(|| Error::InvalidConfig(format!("task {t} not configured"))))
            .collect::<Result<_>>()?;
        Ok(TaskSpecs { specs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<RawTaskSpec> = self.specs.iter().map(TaskSpec::to_raw).collect();
        serde_json::to_string_pretty(&raw).expect("task specs serialize")
    }

    pub fn get(&self, task: TaskId) -> &TaskSpec {
        &self.specs[task.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskSpec> {
        self.specs.iter()
    }
}

impl Default for TaskSpecs {
    fn default() -> Self {
        TaskSpecs::from_json(DEFAULT_TASKS_JSON).expect("embedded tasks config is valid")
    }
}

/// A note rendered through one task's template.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub note_id: String,
    pub task: TaskId,
    pub tokens: Vec<String>,
    pub mask_position: usize,
    pub gold: Option<String>,
}

impl PromptInstance {
    pub fn new(note_id: impl Into<String>, input_text: &str, spec: &TaskSpec, gold: Option<&str>) -> Self {
        let mut tokens = Tokenizer.tokenize(input_text);
        tokens.extend(spec.trigger_tokens());
        let mask_position = tokens
            .iter()
            .position(|t| t == MASK_TOKEN)
            .expect("validated trigger carries a mask");
        PromptInstance {
            note_id: note_id.into(),
            task: spec.task,
            tokens,
            mask_position,
            gold: gold.map(str::to_string),
        }
    }
}

/// `input_text`, a space, then the task's trigger.
pub fn build_prompt(input_text: &str, spec: &TaskSpec) -> PromptInstance {
    PromptInstance::new("", input_text, spec, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> TaskSpecs {
        TaskSpecs::default()
    }

    #[test]
    fn tokenizer_rule() {
        let t = Tokenizer;
        assert_eq!(
            t.tokenize("Period Cycle (Days): 30, BP 118/76"),
            vec!["period", "cycle", "(", "days", ")", ":", "30", ",", "bp", "118", "/", "76"]
        );
        assert_eq!(t.tokenize("[MASK]"), vec!["[", "mask", "]"]);
        assert!(t.tokenize("  \n ").is_empty());
    }

    #[test]
    fn prompt_for_regularity() {
        let p = build_prompt("Menses are regular", specs().get(TaskId::Regularity));
        let expected: Vec<String> = "menses are regular period pattern : [MASK]"
            .split(' ')
            .map(String::from)
            .collect();
        assert_eq!(p.tokens, expected);
        assert_eq!(p.mask_position, p.tokens.len() - 1);
    }

    #[test]
    fn prompt_with_empty_input() {
        let p = build_prompt("", specs().get(TaskId::Flow));
        assert_eq!(p.tokens, vec!["bleeding", "pattern", ":", "[MASK]"]);
        assert_eq!(p.mask_position, 3);
    }

    #[test]
    fn prompt_suffix_intermenstrual() {
        let p = build_prompt("X", specs().get(TaskId::IntermenstrualBleeding));
        assert_eq!(p.tokens, vec!["x", "intermenstrual", "bleeding", ":", "[MASK]"]);
    }

    #[test]
    fn raw_mask_text_is_not_a_mask() {
        let p = build_prompt("[MASK] literal", specs().get(TaskId::Flow));
        assert_eq!(p.tokens.iter().filter(|t| *t == MASK_TOKEN).count(), 1);
    }

    #[test]
    fn every_prompt_has_one_mask_and_trigger_suffix() {
        let specs = specs();
        for spec in specs.iter() {
            let p = build_prompt("some note text: with [MASK] words", spec);
            assert_eq!(p.tokens.iter().filter(|t| *t == MASK_TOKEN).count(), 1);
            assert_eq!(p.tokens[p.mask_position], MASK_TOKEN);
            assert!(p.tokens.ends_with(&spec.trigger_tokens()));
        }
    }

    #[test]
    fn vocabulary_of_empty_corpus() {
        let specs = specs();
        let v = build_vocabulary(std::iter::empty(), &specs);
        assert_eq!(v.token(0), MASK_TOKEN);
        assert_eq!(v.token(1), OOV_TOKEN);
        assert!(v.contains("unspecified"));
        assert!(v.contains("pattern"));
        assert!(v.contains(":"));
        assert!(!v.contains("pain"));
        assert_eq!(v.lookup("pain"), v.oov());
    }

    #[test]
    fn vocabulary_first_occurrence_order() {
        let specs = specs();
        let v = build_vocabulary(["period pain", "pain period cramps"], &specs);
        assert_eq!(&v.tokens()[..5], &["[MASK]", "[OOV]", "period", "pain", "cramps"]);
        let again = build_vocabulary(["period pain", "pain period cramps"], &specs);
        assert_eq!(v, again);
    }

    #[test]
    fn config_rejects_multi_token_words() {
        let json = DEFAULT_TASKS_JSON.replace("\"profuse\"", "\"very heavy\"");
        let err = TaskSpecs::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("single lowercase token"), "{err}");
    }

    #[test]
    fn config_rejects_word_under_two_labels() {
        let json = DEFAULT_TASKS_JSON.replace("\"profuse\"", "\"scanty\"");
        let err = TaskSpecs::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("appears under both"), "{err}");
    }

    #[test]
    fn config_rejects_foreign_labels() {
        let json = DEFAULT_TASKS_JSON.replacen("\"abundant\"", "\"heavy-ish\"", 1);
        assert!(TaskSpecs::from_json(&json).is_err());
    }

    #[test]
    fn config_round_trips() {
        let specs = specs();
        assert_eq!(TaskSpecs::from_json(&specs.to_json()).unwrap(), specs);
    }
}
