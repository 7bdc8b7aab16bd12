//! Analytic gradients against central finite differences.

use mensx_core::corpus::{generate_synthetic, SyntheticProfile, TaskId};
use mensx_core::model::{loss_gradient, nll_loss, MaskFillModel, Verbalizers};
use mensx_core::prompting::{build_vocabulary, PromptInstance, TaskSpecs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let specs = TaskSpecs::default();
    let notes = generate_synthetic(5, 12, &SyntheticProfile::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut triples = 0;
    for (i, note) in notes.iter().enumerate().take(10) {
        // A short window keeps the vocabulary small enough to probe densely.
        let text: String = note.text.split_whitespace().skip(i * 7).take(40).collect::<Vec<_>>().join(" ");
        let vocab = build_vocabulary([text.as_str()], &specs);
        let verbalizers = Verbalizers::resolve(&specs, &vocab).unwrap();
        let mut model = MaskFillModel::zeros(vocab);
        if i > 0 {
            let (rows, feats) = (model.weights().rows(), model.weights().features());
            for r in 0..rows {
                for f in 0..feats {
                    model.weights_mut().set(r, f, rng.random_range(-0.5..0.5));
                }
            }
        }
        for task in [TaskId::ALL[i % 5], TaskId::ALL[(i + 2) % 5]] {
            let labels = task.labels();
            let gold = labels[rng.random_range(0..labels.len())];
            let inst = PromptInstance::new(&note.id, &text, specs.get(task), Some(gold));
            let grad = loss_gradient(&model, std::slice::from_ref(&inst), &verbalizers).unwrap();
            let feats = model.featurize(&inst);
            let verbalizer = verbalizers.get(task);
            let word_rows: Vec<usize> = verbalizer.words.iter().flatten().copied().collect();
            // Every label-word row on every active feature, plus random
            // entries that should have zero gradient.
            let mut probes: Vec<(usize, usize)> = Vec::new();
            for &r in &word_rows {
                for &(f, _) in &feats {
                    probes.push((r, f));
                }
            }
            for _ in 0..20 {
                probes.push((
                    rng.random_range(0..model.weights().rows()),
                    rng.random_range(0..model.weights().features()),
                ));
            }
            for (r, f) in probes {
                let w0 = model.weights().get(r, f);
                model.weights_mut().set(r, f, w0 + H);
                let up = nll_loss(&model, &inst, verbalizer).unwrap();
                model.weights_mut().set(r, f, w0 - H);
                let down = nll_loss(&model, &inst, verbalizer).unwrap();
                model.weights_mut().set(r, f, w0);
                let numeric = (up - down) / (2.0 * H);
                let analytic = grad.get(r, f);
                if numeric.abs() < 1e-9 && analytic.abs() < 1e-9 {
                    continue;
                }
                worst = worst.max(rel_err(analytic, numeric));
            }
            triples += 1;
        }
    }
    assert!(triples >= 20, "only {triples} triples");
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}
