//! Deterministic synthetic gynecological notes.
//!
//! Each note is a sequence of double-space separated segments: well-woman
//! visit boilerplate broken into short form fields, plus attribute-bearing
//! snippets. A documented attribute is written as a templated form field
//! ("Period Pattern Regular"), as narrative ("menses are regular"), or both.
//! Labels are assigned by quota (largest remainder) and then shuffled, so
//! the empirical label frequencies track the profile to within one note per
//! label. By default a note without a period pattern also lacks a flow
//! description.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClinicalNote, LabelMap, TaskId};
use crate::error::{Error, Result};
use crate::prompting::Tokenizer;
use crate::segmenter::segment_note;

/// Label counts of the 91-note annotated training split, in canonical label
/// order per task.
pub const TABLE1_TRAIN_COUNTS: [(TaskId, &[usize]); 5] = [
    (TaskId::Dysmenorrhea, &[29, 21, 41]),
    (TaskId::DysmenorrheaSeverity, &[7, 11, 10, 63]),
    (TaskId::Regularity, &[68, 9, 14]),
    (TaskId::Flow, &[3, 46, 10, 32]),
    (TaskId::IntermenstrualBleeding, &[3, 11, 77]),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorPrefix {
    pub min_tokens: usize,
    pub max_tokens: usize,
}

/// Label distributions and note-shape knobs.
///
/// Severity is only documented for notes with dysmenorrhea; its
/// distribution is conditional on `dysmenorrhea = yes` and every other note
/// gets severity `unknown`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticProfile {
    pub dysmenorrhea: Vec<f64>,
    pub severity_given_yes: Vec<f64>,
    pub regularity: Vec<f64>,
    pub flow: Vec<f64>,
    pub intermenstrual_bleeding: Vec<f64>,
    /// Fraction of notes padded beyond 512 tokens.
    pub long_fraction: f64,
    /// Fraction of attribute mentions written twice, once as a form field
    /// and once as narrative.
    pub both_styles_fraction: f64,
    /// Of the remaining mentions, the fraction phrased as narrative.
    pub narrative_fraction: f64,
    /// Fraction of notes receiving one contradictory regularity or flow
    /// mention (the gold label keeps the first, planted value).
    pub conflict_rate: f64,
    /// When set, every note opens with at least `min_tokens` of boilerplate
    /// before any attribute snippet may appear.
    pub distractor_prefix: Option<DistractorPrefix>,
    /// Notes without a period pattern also leave flow undocumented, as far
    /// as the flow `unknown` share allows. Marginals are unchanged.
    pub couple_flow_to_regularity: bool,
}

fn proportions(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            dysmenorrhea: proportions(&[29, 21, 41]),
            severity_given_yes: proportions(&[7, 11, 10, 1]),
            regularity: proportions(&[68, 9, 14]),
            flow: proportions(&[3, 46, 10, 32]),
            intermenstrual_bleeding: proportions(&[3, 11, 77]),
            long_fraction: 0.6,
            both_styles_fraction: 1.0,
            narrative_fraction: 0.5,
            conflict_rate: 0.0,
            distractor_prefix: None,
            couple_flow_to_regularity: true,
        }
    }
}

impl SyntheticProfile {
    /// Every note carries `min..=max` tokens of boilerplate before the first
    /// attribute mention.
    pub fn with_distractor_prefix(mut self, min_tokens: usize, max_tokens: usize) -> Self {
        self.distractor_prefix = Some(DistractorPrefix {
            min_tokens,
            max_tokens,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dists: [(&str, &[f64], usize); 5] = [
            ("dysmenorrhea", &self.dysmenorrhea, 3),
            ("severity_given_yes", &self.severity_given_yes, 4),
            ("regularity", &self.regularity, 3),
            ("flow", &self.flow, 4),
            ("intermenstrual_bleeding", &self.intermenstrual_bleeding, 3),
        ];
        for (name, p, len) in dists {
            if p.len() != len {
                return Err(Error::InvalidConfig(format!(
                    "{name}: expected {len} probabilities, got {}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name}: probabilities must be finite and non-negative"
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "{name}: probabilities sum to {sum}, expected 1"
                )));
            }
        }
        for (name, f) in [
            ("long_fraction", self.long_fraction),
            ("both_styles_fraction", self.both_styles_fraction),
            ("narrative_fraction", self.narrative_fraction),
            ("conflict_rate", self.conflict_rate),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if let Some(p) = self.distractor_prefix {
            if p.min_tokens > p.max_tokens {
                return Err(Error::InvalidConfig(
                    "distractor_prefix: min_tokens exceeds max_tokens".into(),
                ));
            }
        }
        Ok(())
    }
}

const DISTRACTORS: &[&str] = &[
    "Reason for Visit Gynecology Well-woman Visit",
    "Patient presents today for her annual gynecologic examination and health maintenance review",
    "Past Medical History asthma in childhood currently asymptomatic uses inhaler rarely",
    "Past Surgical History appendectomy at age 12 tonsillectomy as a child",
    "Medications multivitamin daily vitamin D 1000 units ibuprofen as needed for headaches",
    "Allergies penicillin causes rash tolerates cephalosporins without issue",
    "Family History mother with hypertension maternal grandmother with breast cancer at 67",
    "Social History works as a teacher exercises three times weekly drinks socially",
    "Tobacco use never smoker Alcohol one to two drinks per week Drug use denied",
    "Sexual History sexually active with one male partner uses condoms for contraception",
    "Obstetric History G2P2 two uncomplicated vaginal deliveries at term",
    "Last Pap smear three years ago reported as negative for intraepithelial lesion",
    "HPV co-testing performed with the last cytology result was negative",
    "Vitals BP 118 76 HR 72 temperature 36 8 C weight 64 kg BMI 23 4",
    "General well appearing woman in no acute distress alert and oriented",
    "HEENT normocephalic atraumatic mucous membranes moist oropharynx clear",
    "Neck supple thyroid without enlargement or palpable nodules",
    "Lungs clear to auscultation bilaterally without wheezes or crackles",
    "Heart rate and rhythm within expected range without murmurs or gallops",
    "Breast exam symmetric without masses skin changes or nipple discharge bilaterally",
    "Abdomen soft nontender nondistended bowel sounds active in all quadrants",
    "External genitalia unremarkable without lesions or erythema",
    "Speculum exam vaginal mucosa pink and moist cervix visualized and closed",
    "Bimanual exam uterus anteverted and mobile adnexa without masses or tenderness",
    "Extremities warm and well perfused without edema",
    "Skin warm and dry without rashes or suspicious lesions noted on exam",
    "Psychiatric mood and affect appropriate judgment and insight intact",
    "Screening mammogram ordered per age guidelines colon screening discussed",
    "Immunizations influenza vaccine given today tetanus booster up to date",
    "Counseling provided regarding healthy diet weight-bearing exercise and calcium intake",
    "Contraception counseling reviewed options including IUD implant and oral pills",
    "Discussed safe sex practices and offered screening for sexually transmitted infections",
    "Gonorrhea and chlamydia testing collected from cervical specimen today",
    "Pelvic ultrasound from last year showed a small simple ovarian cyst since resolved",
    "Return to clinic in one year for routine examination or sooner as needed",
    "Patient verbalized understanding of the plan and all questions were answered",
    "Review of systems otherwise negative except as documented above",
    "Negative for fever chills night sweats or unintentional weight loss",
    "Negative for dysuria urinary frequency or urgency",
    "Negative for postcoital bleeding vaginal discharge or pelvic pressure",
    "Labs drawn today CBC TSH fasting lipid panel and hemoglobin A1c",
    "Folic acid supplementation recommended while attempting conception",
    "Bone health counseled on vitamin D and calcium no fractures reported",
    "Depression screening PHQ-2 score 0 anxiety screening unremarkable",
    "Seat belt use always smoke detectors at home no firearms kept in the household",
];

const TEMPLATED: usize = 0;
const NARRATIVE: usize = 1;

/// Attribute snippets: (templated, narrative) phrasing and the labels each
/// one plants.
struct Snippet {
    phrasings: [&'static str; 2],
    plants: &'static [(TaskId, &'static str)],
}

const SNIPPETS: &[Snippet] = &[
    Snippet {
        phrasings: ["Dysmenorrhea Mild", "reports mild cramps with menses"],
        plants: &[
            (TaskId::Dysmenorrhea, "yes"),
            (TaskId::DysmenorrheaSeverity, "mild"),
        ],
    },
    Snippet {
        phrasings: ["Dysmenorrhea Moderate", "reports moderate cramps with menses"],
        plants: &[
            (TaskId::Dysmenorrhea, "yes"),
            (TaskId::DysmenorrheaSeverity, "moderate"),
        ],
    },
    Snippet {
        phrasings: ["Dysmenorrhea Severe", "reports severe cramps with menses"],
        plants: &[
            (TaskId::Dysmenorrhea, "yes"),
            (TaskId::DysmenorrheaSeverity, "severe"),
        ],
    },
    Snippet {
        phrasings: ["Dysmenorrhea Yes", "reports cramps with menses"],
        plants: &[(TaskId::Dysmenorrhea, "yes")],
    },
    Snippet {
        phrasings: ["Dysmenorrhea None", "menses are not painful"],
        plants: &[(TaskId::Dysmenorrhea, "no")],
    },
    Snippet {
        phrasings: ["Period Pattern Regular", "menses are regular"],
        plants: &[(TaskId::Regularity, "regular")],
    },
    Snippet {
        phrasings: ["Period Pattern Irregular", "menses are irregular"],
        plants: &[(TaskId::Regularity, "irregular")],
    },
    Snippet {
        phrasings: ["Bleeding Pattern Scanty", "menstrual flow is scanty"],
        plants: &[(TaskId::Flow, "scanty")],
    },
    Snippet {
        phrasings: ["Bleeding Pattern Normal", "menstrual flow is normal"],
        plants: &[(TaskId::Flow, "normal")],
    },
    Snippet {
        phrasings: ["Bleeding Pattern Heavy", "menstrual flow is heavy"],
        plants: &[(TaskId::Flow, "abundant")],
    },
    Snippet {
        phrasings: [
            "Intermenstrual Bleeding Present",
            "intermenstrual bleeding is present",
        ],
        plants: &[(TaskId::IntermenstrualBleeding, "yes")],
    },
    Snippet {
        phrasings: [
            "Intermenstrual Bleeding Absent",
            "intermenstrual bleeding is absent",
        ],
        plants: &[(TaskId::IntermenstrualBleeding, "no")],
    },
];

fn snippet_for(task: TaskId, label: &str, severity: Option<&str>) -> Option<&'static Snippet> {
    SNIPPETS.iter().find(|s| {
        s.plants.iter().any(|(t, l)| *t == task && *l == label)
            && match severity {
                Some(sev) => s
                    .plants
                    .iter()
                    .any(|(t, l)| *t == TaskId::DysmenorrheaSeverity && *l == sev),
                None => s.plants.len() == 1,
            }
    })
}

/// Re-extracts planted attribute mentions by exact segment match.
///
/// Returns, per task, every label planted in the note in document order;
/// tasks without a mention map to an empty list ("unknown").
pub fn audit_labels(text: &str) -> BTreeMap<TaskId, Vec<&'static str>> {
    let mut found: BTreeMap<TaskId, Vec<&'static str>> =
        TaskId::ALL.iter().map(|t| (*t, Vec::new())).collect();
    for segment in segment_note(text) {
        for snippet in SNIPPETS {
            if snippet.phrasings.contains(&segment.text.as_str()) {
                for (task, label) in snippet.plants {
                    found.get_mut(task).unwrap().push(label);
                }
            }
        }
    }
    found
}

/// Largest-remainder quota of `n` items over `probs`, ties to the lower
/// index.
fn quotas(n: usize, probs: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn shuffled_labels(
    task: TaskId,
    n: usize,
    probs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<&'static str> {
    let mut labels: Vec<&'static str> = quotas(n, probs)
        .into_iter()
        .zip(task.labels())
        .flat_map(|(count, label)| std::iter::repeat_n(*label, count))
        .collect();
    labels.shuffle(rng);
    labels
}

/// Flow labels with the same quotas as [`shuffled_labels`], but notes
/// without a documented period pattern get flow `unknown` first (as many as
/// the unknown quota allows); the remaining labels are shuffled over the
/// other notes.
fn coupled_flow_labels(regularity: &[&str], probs: &[f64], rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = regularity.len();
    let labels = TaskId::Flow.labels();
    let unknown = labels.len() - 1;
    let mut counts = quotas(n, probs);
    let mut undocumented: Vec<usize> = (0..n).filter(|&i| regularity[i] == "unknown").collect();
    undocumented.shuffle(rng);
    undocumented.truncate(counts[unknown]);
    counts[unknown] -= undocumented.len();

    let mut rest: Vec<&'static str> = counts
        .into_iter()
        .zip(labels)
        .flat_map(|(count, label)| std::iter::repeat_n(*label, count))
        .collect();
    rest.shuffle(rng);
    let mut rest = rest.into_iter();
    let mut out = vec![labels[unknown]; n];
    let forced: std::collections::HashSet<usize> = undocumented.into_iter().collect();
    for (i, slot) in out.iter_mut().enumerate() {
        if !forced.contains(&i) {
            *slot = rest.next().expect("quotas cover every note");
        }
    }
    out
}

/// Words per boilerplate field. Form exports break sentences into short
/// double-space separated fields.
const FIELD_WORDS: usize = 3;

fn pick_distractors(rng: &mut ChaCha8Rng, min_tokens: usize) -> Vec<String> {
    let tokenizer = Tokenizer;
    let mut picked = Vec::new();
    let mut tokens = 0;
    while tokens < min_tokens {
        let d = DISTRACTORS.choose(rng).unwrap();
        tokens += tokenizer.count(d);
        let words: Vec<&str> = d.split(' ').collect();
        picked.extend(words.chunks(FIELD_WORDS).map(|c| c.join(" ")));
    }
    picked
}

/// Generates `n` labelled notes. Output is a pure function of
/// `(seed, n, profile)`.
pub fn generate_synthetic(seed: u64, n: usize, profile: &SyntheticProfile) -> Result<Vec<ClinicalNote>> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dys = shuffled_labels(TaskId::Dysmenorrhea, n, &profile.dysmenorrhea, &mut rng);
    let with_dys = dys.iter().filter(|l| **l == "yes").count();
    let mut severities = shuffled_labels(
        TaskId::DysmenorrheaSeverity,
        with_dys,
        &profile.severity_given_yes,
        &mut rng,
    )
    .into_iter();
    let reg = shuffled_labels(TaskId::Regularity, n, &profile.regularity, &mut rng);
    let flow = if profile.couple_flow_to_regularity {
        coupled_flow_labels(&reg, &profile.flow, &mut rng)
    } else {
        shuffled_labels(TaskId::Flow, n, &profile.flow, &mut rng)
    };
    let imb = shuffled_labels(
        TaskId::IntermenstrualBleeding,
        n,
        &profile.intermenstrual_bleeding,
        &mut rng,
    );

    let mut notes = Vec::with_capacity(n);
    for i in 0..n {
        let severity = if dys[i] == "yes" {
            severities.next().unwrap()
        } else {
            "unknown"
        };
        let mut labels = LabelMap::new();
        labels.insert(TaskId::Dysmenorrhea, dys[i].to_string());
        labels.insert(TaskId::DysmenorrheaSeverity, severity.to_string());
        labels.insert(TaskId::Regularity, reg[i].to_string());
        labels.insert(TaskId::Flow, flow[i].to_string());
        labels.insert(TaskId::IntermenstrualBleeding, imb[i].to_string());

        let text = render_note(&labels, profile, &mut rng);
        notes.push(ClinicalNote {
            id: format!("synth-{seed}-{i:05}"),
            text,
            labels: Some(labels),
        });
    }
    Ok(notes)
}

fn render_note(labels: &LabelMap, profile: &SyntheticProfile, rng: &mut ChaCha8Rng) -> String {
    let mut mentioned: Vec<&'static Snippet> = Vec::new();
    match labels[&TaskId::Dysmenorrhea].as_str() {
        "yes" => {
            let sev = labels[&TaskId::DysmenorrheaSeverity].as_str();
            let sev = (sev != "unknown").then_some(sev);
            mentioned.push(snippet_for(TaskId::Dysmenorrhea, "yes", sev).unwrap());
        }
        "no" => mentioned.push(snippet_for(TaskId::Dysmenorrhea, "no", None).unwrap()),
        _ => {}
    }
    for task in [TaskId::Regularity, TaskId::Flow, TaskId::IntermenstrualBleeding] {
        let label = labels[&task].as_str();
        if label != "unknown" {
            mentioned.push(snippet_for(task, label, None).unwrap());
        }
    }
    let mut snippets: Vec<&'static str> = Vec::new();
    for snippet in mentioned {
        if rng.random::<f64>() < profile.both_styles_fraction {
            snippets.extend(snippet.phrasings);
        } else if rng.random::<f64>() < profile.narrative_fraction {
            snippets.push(snippet.phrasings[NARRATIVE]);
        } else {
            snippets.push(snippet.phrasings[TEMPLATED]);
        }
    }
    if rng.random::<f64>() < profile.conflict_rate {
        if let Some(extra) = conflicting_snippet(labels, rng) {
            snippets.push(extra);
        }
    }

    let long = rng.random::<f64>() < profile.long_fraction;
    let body_tokens = if long {
        rng.random_range(560..=900)
    } else {
        rng.random_range(120..=400)
    };

    let prefix = match profile.distractor_prefix {
        Some(p) => {
            let target = rng.random_range(p.min_tokens..=p.max_tokens);
            pick_distractors(rng, target)
        }
        None => Vec::new(),
    };
    let mut body = pick_distractors(rng, body_tokens);
    // insertion points are chosen left to right so snippet order is kept
    let mut slots: Vec<usize> = (0..snippets.len())
        .map(|_| rng.random_range(0..=body.len()))
        .collect();
    slots.sort_unstable();
    for (k, (slot, snippet)) in slots.into_iter().zip(snippets).enumerate() {
        body.insert(slot + k, snippet.to_string());
    }

    prefix
        .into_iter()
        .chain(body)
        .collect::<Vec<_>>()
        .join("  ")
}

/// A templated mention contradicting a documented regularity or flow value.
fn conflicting_snippet(labels: &LabelMap, rng: &mut ChaCha8Rng) -> Option<&'static str> {
    let candidates: Vec<TaskId> = [TaskId::Regularity, TaskId::Flow]
        .into_iter()
        .filter(|t| labels[t] != "unknown")
        .collect();
    let task = *candidates.choose(rng)?;
    let gold = labels[&task].as_str();
    let others: Vec<&str> = task
        .labels()
        .iter()
        .copied()
        .filter(|l| *l != gold && *l != "unknown")
        .collect();
    let other = others.choose(rng)?;
    Some(snippet_for(task, other, None)?.phrasings[TEMPLATED])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undocumented_pattern_means_undocumented_flow() {
        let notes = generate_synthetic(5, 300, &SyntheticProfile::default()).unwrap();
        for n in &notes {
            if n.gold(TaskId::Regularity) == Some("unknown") {
                assert_eq!(n.gold(TaskId::Flow), Some("unknown"));
            }
        }
        let flow_unknown = notes.iter().filter(|n| n.gold(TaskId::Flow) == Some("unknown")).count();
        assert_eq!(flow_unknown, quotas(300, &SyntheticProfile::default().flow)[3]);
    }

    #[test]
    fn every_mention_is_written_both_ways_by_default() {
        let notes = generate_synthetic(8, 40, &SyntheticProfile::default()).unwrap();
        for n in &notes {
            for (task, found) in audit_labels(&n.text) {
                let gold = n.gold(task).unwrap();
                let expected = if gold == "unknown" { 0 } else { 2 };
                assert_eq!(found.len(), expected, "{task} in {}", n.id);
                assert!(found.iter().all(|l| *l == gold));
            }
        }
    }

    #[test]
    fn zero_notes() {
        assert!(generate_synthetic(42, 0, &SyntheticProfile::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = SyntheticProfile::default();
        let a = serde_json::to_string(&generate_synthetic(42, 10, &p).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_synthetic(42, 10, &p).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_synthetic(43, 10, &p).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_distribution_not_summing_to_one() {
        let p = SyntheticProfile {
            flow: vec![0.5, 0.5, 0.1, 0.0],
            ..SyntheticProfile::default()
        };
        let err = generate_synthetic(1, 5, &p).unwrap_err();
        assert!(err.to_string().contains("flow"), "{err}");
    }

    #[test]
    fn quotas_follow_largest_remainder() {
        assert_eq!(quotas(10, &[0.55, 0.25, 0.2]), vec![6, 2, 2]);
        assert_eq!(quotas(3, &[1.0 / 3.0; 3]), vec![1, 1, 1]);
        assert_eq!(quotas(0, &[0.5, 0.5]), vec![0, 0]);
        assert_eq!(quotas(91, &proportions(&[29, 21, 41])), vec![29, 21, 41]);
    }

    #[test]
    fn every_snippet_mentions_a_query_term() {
        let query = ["dysmenorrhea", "period", "pattern", "menses", "flow", "bleeding", "spotting"];
        for s in SNIPPETS {
            for p in s.phrasings {
                let lower = p.to_lowercase();
                assert!(query.iter().any(|q| lower.contains(q)), "{p}");
            }
        }
    }

    #[test]
    fn distractors_never_match_a_snippet() {
        for d in DISTRACTORS {
            assert!(audit_labels(d).values().all(Vec::is_empty), "{d}");
            assert!(!d.contains("  "));
        }
    }

    #[test]
    fn severity_only_with_dysmenorrhea() {
        let notes = generate_synthetic(5, 300, &SyntheticProfile::default()).unwrap();
        for n in notes {
            if n.gold(TaskId::Dysmenorrhea) != Some("yes") {
                assert_eq!(n.gold(TaskId::DysmenorrheaSeverity), Some("unknown"));
            }
        }
    }

    #[test]
    fn conflict_mode_adds_a_second_mention() {
        let p = SyntheticProfile {
            conflict_rate: 1.0,
            ..SyntheticProfile::default()
        };
        let notes = generate_synthetic(11, 50, &p).unwrap();
        let conflicted = notes
            .iter()
            .filter(|n| audit_labels(&n.text).values().any(|v| v.iter().any(|l| *l != v[0])))
            .count();
        assert!(conflicted > 0);
        for n in &notes {
            for (task, found) in audit_labels(&n.text) {
                let gold = n.gold(task).unwrap();
                if gold != "unknown" {
                    assert_eq!(found[0], gold);
                }
            }
        }
    }

    #[test]
    fn distractor_prefix_precedes_every_snippet() {
        let p = SyntheticProfile::default().with_distractor_prefix(400, 450);
        let tokenizer = Tokenizer;
        for note in generate_synthetic(3, 40, &p).unwrap() {
            let segments = segment_note(&note.text);
            let first = segments
                .iter()
                .position(|s| SNIPPETS.iter().any(|sn| sn.phrasings.contains(&s.text.as_str())));
            if let Some(first) = first {
                let before: usize = segments[..first]
                    .iter()
                    .map(|s| tokenizer.count(&s.text))
                    .sum();
                assert!(before >= 400, "{before}");
            }
        }
    }
}
