use std::collections::BTreeMap;
use std::io::Write;

use mensx_core::corpus::{
    audit_labels, dataset_stats, generate_synthetic, load_notes, split_train_test, write_notes, ClinicalNote,
    SyntheticProfile, TaskId, TABLE1_TRAIN_COUNTS,
};
use mensx_core::prompting::Tokenizer;
use mensx_core::Error;
use proptest::prelude::*;

/// 91 placeholder notes whose labels reproduce the training split counts.
fn table1_fixture() -> Vec<ClinicalNote> {
    let mut labels: Vec<BTreeMap<TaskId, String>> = vec![BTreeMap::new(); 91];
    for (task, counts) in TABLE1_TRAIN_COUNTS {
        let mut i = 0;
        for (label, &c) in task.labels().iter().zip(counts) {
            for _ in 0..c {
                labels[i].insert(task, label.to_string());
                i += 1;
            }
        }
        assert_eq!(i, 91);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| ClinicalNote::new(format!("n{i}"), format!("dummy note {i}")).with_labels(l))
        .collect()
}

#[test]
fn table1_counts() {
    let stats = dataset_stats(&table1_fixture(), &Tokenizer);
    assert_eq!(stats.count(TaskId::Dysmenorrhea, "yes"), 29);
    assert_eq!(stats.count(TaskId::Dysmenorrhea, "no"), 21);
    assert_eq!(stats.count(TaskId::Dysmenorrhea, "unknown"), 41);
    for (task, counts) in TABLE1_TRAIN_COUNTS {
        for (label, &c) in task.labels().iter().zip(counts) {
            assert_eq!(stats.count(task, label), c, "{task}/{label}");
        }
        assert_eq!(stats.annotated(task), 91);
    }
}

#[test]
fn generator_counts_are_the_planted_ones() {
    let notes = generate_synthetic(7, 3, &SyntheticProfile::default()).unwrap();
    let stats = dataset_stats(&notes, &Tokenizer);
    for task in TaskId::ALL {
        for label in task.labels() {
            let planted = notes.iter().filter(|n| n.gold(task) == Some(label)).count();
            assert_eq!(stats.count(task, label), planted);
        }
    }
}

#[test]
fn generator_follows_table1_proportions() {
    let notes = generate_synthetic(42, 1000, &SyntheticProfile::default()).unwrap();
    let stats = dataset_stats(&notes, &Tokenizer);
    for (task, counts) in TABLE1_TRAIN_COUNTS {
        let total: usize = counts.iter().sum();
        for (label, &c) in task.labels().iter().zip(counts) {
            let expected = c as f64 / total as f64;
            let got = stats.count(task, label) as f64 / 1000.0;
            assert!((got - expected).abs() <= 0.03, "{task}/{label}: {got:.3} vs {expected:.3}");
        }
    }
}

#[test]
fn generator_self_audit_agrees_with_gold() {
    for seed in [1, 42, 1234] {
        for n in generate_synthetic(seed, 200, &SyntheticProfile::default()).unwrap() {
            for (task, found) in audit_labels(&n.text) {
                let gold = n.gold(task).unwrap();
                if gold == "unknown" {
                    assert!(found.is_empty(), "{} {task}", n.id);
                } else {
                    assert!(!found.is_empty() && found.iter().all(|l| *l == gold), "{} {task}", n.id);
                }
            }
        }
    }
}

#[test]
fn some_notes_exceed_the_truncation_budget() {
    let notes = generate_synthetic(42, 100, &SyntheticProfile::default()).unwrap();
    let long = notes.iter().filter(|n| Tokenizer.count(&n.text) > 512).count();
    assert!(long > 30, "{long}");
}

#[test]
fn load_errors_name_what_is_wrong() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\",\"labels\":{\"flow\":\"heavy\"}}\n").unwrap();
    let err = load_notes(&path, false).unwrap_err();
    assert!(err.to_string().ends_with("line 1: unknown label 'heavy' for task flow"), "{err}");

    std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n").unwrap();
    match load_notes(&path, false) {
        Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }

    std::fs::write(&path, "").unwrap();
    assert!(load_notes(&path, true).unwrap().is_empty());

    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "{{\"id\":\"a\",\"text\":\"x\",\"labels\":{{\"regularity\":\"regular\"}}}}").unwrap();
    let notes = load_notes(&path, true).unwrap();
    assert_eq!(notes[0].labels.as_ref().unwrap().len(), 1);
}

#[test]
fn split_sizes_from_the_dataset() {
    let notes = generate_synthetic(3, 140, &SyntheticProfile::default()).unwrap();
    let (train, test) = split_train_test(&notes, 0.65, 42).unwrap();
    assert_eq!((train.len(), test.len()), (91, 49));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn notes_round_trip_through_jsonl(seed in 0u64..1000, n in 0usize..8) {
        let notes = generate_synthetic(seed, n, &SyntheticProfile::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.jsonl");
        write_notes(&path, &notes).unwrap();
        prop_assert_eq!(load_notes(&path, true).unwrap(), notes);
    }

    #[test]
    fn split_is_a_partition(n in 0usize..60, ratio in 0.05f64..0.95, seed in 0u64..100) {
        let notes = generate_synthetic(1, n, &SyntheticProfile::default()).unwrap();
        let (a, b) = split_train_test(&notes, ratio, seed).unwrap();
        prop_assert_eq!(a.len() + b.len(), n);
        let mut ids: Vec<&str> = a.iter().chain(&b).map(|x| x.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}
