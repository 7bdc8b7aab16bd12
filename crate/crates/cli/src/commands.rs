use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mensx_core::corpus::{
    generate_synthetic, load_notes, split_train_test, stats_with_lengths, summarize_lengths, write_notes, ClinicalNote,
    SyntheticProfile,
};
use mensx_core::evaluation::{compare_runs, evaluate, load_predictions, write_predictions, EvalReport};
use mensx_core::icl::{default_shots, icl_predict_all, GenerateClient, ParseOptions, DEFAULT_MAX_TOKENS};
use mensx_core::prompting::{TaskSpecs, Tokenizer};
use mensx_core::retrieval::{prepare_inputs, retrieve_all, InputMode, RetrievalConfig};
use mensx_core::segmenter::segment_note;
use mensx_core::training::{fit, run_cv, select_learning_rate, Predictor};
use mensx_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{resolve, retrieval_config, train_config, AppConfig, RetrievalFlags};
use crate::{Cli, Command};

pub fn parse_input_mode(s: &str) -> Result<InputMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').ok_or("expected MIN-MAX")?;
    let a = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    if a > b {
        return Err(format!("{a} is larger than {b}"));
    }
    Ok((a, b))
}

/// Writes `content` to `path`, or to standard output when `path` is None.
fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| Error::io(p, e))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes()).context("writing to standard output")?;
        }
    }
    Ok(())
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct SegmentLine<'a> {
    id: &'a str,
    ordinal: usize,
    text: &'a str,
}

#[derive(Serialize)]
struct SegmentScore<'a> {
    ordinal: usize,
    text: &'a str,
    bm25: f64,
    semantic: f64,
    fused: f64,
}

#[derive(Serialize, Deserialize)]
struct RetrievedLine {
    id: String,
    retrieved_text: String,
    tokens_before: usize,
    tokens_after: usize,
}

fn load_retrieved(path: &Path) -> Result<Vec<RetrievedLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                }
                .into()
            })
        })
        .collect()
}

struct Session {
    app: AppConfig,
    specs: TaskSpecs,
}

impl Session {
    fn retrieval(&self, flags: &RetrievalFlags) -> Result<RetrievalConfig> {
        retrieval_config(flags, &self.app.retrieval)
    }

    /// Model inputs for `notes`: a precomputed retrieve file when given,
    /// otherwise computed here according to `mode`.
    fn inputs(
        &self,
        notes: &[ClinicalNote],
        inputs: Option<&Path>,
        mode: InputMode,
        flags: &RetrievalFlags,
    ) -> Result<Vec<String>> {
        if let Some(path) = inputs {
            let mut by_id: HashMap<String, String> = load_retrieved(path)?
                .into_iter()
                .map(|r| (r.id, r.retrieved_text))
                .collect();
            return notes
                .iter()
                .map(|n| {
                    by_id.remove(&n.id).ok_or_else(|| {
                        Error::InvalidInput(format!("note '{}' is missing from {}", n.id, path.display())).into()
                    })
                })
                .collect();
        }
        log::info!("input mode = {mode:?}");
        let cfg = self.retrieval(flags)?;
        let provider = cfg.provider.build()?;
        Ok(prepare_inputs(notes, mode, &cfg, provider.as_ref())?)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let app = match &cli.config {
        Some(path) => {
            log::info!("config file {}", path.display());
            AppConfig::load(path)?
        }
        None => AppConfig::default(),
    };
    let tasks_path = resolve("tasks", cli.tasks.clone().map(Some), app.tasks.clone().map(Some), None::<PathBuf>);
    let specs = match tasks_path {
        Some(p) => TaskSpecs::load(p)?,
        None => TaskSpecs::default(),
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(Error::InvalidConfig("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")
            .map_err(|e| Error::InvalidConfig(format!("{e:#}")))?;
    }
    let ctx = Session { app, specs };

    match cli.command {
        Command::Segment { notes, out } => {
            let notes = load_notes(&notes, false)?;
            let mut lines = Vec::new();
            for n in &notes {
                for s in segment_note(&n.text) {
                    lines.push(serde_json::to_string(&SegmentLine {
                        id: &n.id,
                        ordinal: s.ordinal,
                        text: &s.text,
                    })?);
                }
            }
            let mut body = lines.join("\n");
            if !body.is_empty() {
                body.push('\n');
            }
            emit(out.as_deref(), &body)
        }
        Command::Retrieve { notes, out, retrieval } => {
            let notes = load_notes(&notes, false)?;
            let cfg = ctx.retrieval(&retrieval)?;
            let provider = cfg.provider.build()?;
            let results = retrieve_all(&notes, &cfg, provider.as_ref())?;
            let lines = notes.iter().zip(&results).map(|(n, r)| {
                json!({
                    "id": n.id,
                    "retrieved_text": r.retrieved_text,
                    "segments": r.segments.iter().map(|s| SegmentScore {
                        ordinal: s.segment.ordinal,
                        text: &s.segment.text,
                        bm25: s.lexical,
                        semantic: s.semantic,
                        fused: s.fused,
                    }).collect::<Vec<_>>(),
                    "tokens_before": r.tokens_before,
                    "tokens_after": r.tokens_after,
                })
            });
            emit(Some(&out), &jsonl(lines)?)?;
            log::info!("retrieved {} notes into {}", notes.len(), out.display());
            Ok(())
        }
        Command::Train {
            notes,
            inputs,
            retrieval,
            out,
            train,
            retrieval_flags,
        } => {
            let cfg = train_config(&train, &ctx.app.train)?;
            let notes = load_notes(&notes, true)?;
            let texts = ctx.inputs(&notes, inputs.as_deref(), retrieval, &retrieval_flags)?;
            let predictor = fit(&notes, &texts, &ctx.specs, &cfg)?;
            predictor.save(&out)?;
            let tasks: Vec<&str> = predictor.tasks().into_iter().map(|t| t.as_str()).collect();
            log::info!("wrote model for {} to {}", tasks.join(", "), out.display());
            Ok(())
        }
        Command::Predict {
            model,
            notes,
            inputs,
            retrieval,
            out,
            retrieval_flags,
        } => {
            let predictor = Predictor::load(&model)?;
            let notes = load_notes(&notes, false)?;
            let texts = ctx.inputs(&notes, inputs.as_deref(), retrieval, &retrieval_flags)?;
            let records = predictor.predict_all(&notes, &texts, &ctx.specs)?;
            write_predictions(&out, &records)?;
            log::info!("wrote {} predictions to {}", records.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            predictions,
            gold,
            compare,
            out,
            csv,
        } => {
            if let Some(pair) = compare {
                let a = EvalReport::load(&pair[0])?;
                let b = EvalReport::load(&pair[1])?;
                let table = compare_runs(&a, &b)?;
                if let Some(p) = &out {
                    emit(Some(p), &serde_json::to_string_pretty(&table)?)?;
                }
                return emit(None, &table.render_table());
            }
            let (Some(predictions), Some(gold)) = (predictions, gold) else {
                bail!(Error::InvalidInput("--predictions and --gold are required".into()));
            };
            let records = load_predictions(&predictions)?;
            let gold = load_notes(&gold, false)?;
            let report = evaluate(&records, &gold)?;
            if let Some(p) = &out {
                emit(Some(p), &serde_json::to_string_pretty(&report)?)?;
            }
            emit(None, &if csv { report.render_csv() } else { report.render_table() })
        }
        Command::Cv {
            notes,
            inputs,
            retrieval,
            folds,
            lr_grid,
            out,
            model_out,
            train,
            retrieval_flags,
        } => {
            let mut cfg = train_config(&train, &ctx.app.train)?;
            let k = resolve("cv.folds", folds, ctx.app.cv.folds, 3);
            let notes = load_notes(&notes, true)?;
            let texts = ctx.inputs(&notes, inputs.as_deref(), retrieval, &retrieval_flags)?;
            let mut grid = None;
            if !lr_grid.is_empty() {
                let (lr, scores) = select_learning_rate(&notes, &texts, &ctx.specs, &cfg, &lr_grid, k)?;
                log::info!("selected learning rate {lr}");
                cfg.learning_rate = lr;
                grid = Some(scores);
            }
            let report = run_cv(&notes, &texts, &ctx.specs, &cfg, k, model_out.is_some())?;
            if let (Some(path), Some(p)) = (&model_out, &report.final_predictor) {
                p.save(path)?;
            }
            let body = json!({
                "learning_rate": cfg.learning_rate,
                "lr_grid": grid,
                "cv": report,
            });
            emit(out.as_deref(), &(serde_json::to_string_pretty(&body)? + "\n"))
        }
        Command::Icl {
            url,
            shots_file,
            notes,
            out,
            max_tokens,
            max_concurrency,
            lenient,
        } => {
            let icl = &ctx.app.icl;
            let url = resolve("icl.url", url, icl.url.clone(), String::new());
            if url.is_empty() {
                bail!(Error::InvalidConfig("icl needs --url".into()));
            }
            let shots = match resolve("icl.shots", shots_file.map(Some), icl.shots.clone().map(Some), None) {
                Some(p) => load_notes(p, true)?,
                None => default_shots(),
            };
            let mut client = GenerateClient::new(&url);
            client.max_tokens = resolve("icl.max_tokens", max_tokens, icl.max_tokens, DEFAULT_MAX_TOKENS);
            let cap = resolve("icl.max_concurrency", max_concurrency, icl.max_concurrency, 4);
            let opts = ParseOptions {
                lenient: resolve("icl.lenient", lenient.then_some(true), icl.lenient, false),
            };
            let notes = load_notes(&notes, false)?;
            let records = icl_predict_all(&client, &shots, &notes, &ctx.specs, opts, cap)?;
            write_predictions(&out, &records)?;
            log::info!("wrote {} predictions to {}", records.len(), out.display());
            Ok(())
        }
        Command::Synth {
            seed,
            n,
            out,
            profile,
            distractor_prefix,
        } => {
            let mut prof = match profile {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str::<SyntheticProfile>(&text)
                        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
                }
                None => SyntheticProfile::default(),
            };
            if let Some((lo, hi)) = distractor_prefix {
                prof = prof.with_distractor_prefix(lo, hi);
            }
            let notes = generate_synthetic(seed, n, &prof)?;
            write_notes(&out, &notes)?;
            log::info!("wrote {n} synthetic notes (seed {seed}) to {}", out.display());
            Ok(())
        }
        Command::Split {
            notes,
            ratio,
            seed,
            train_out,
            test_out,
        } => {
            let notes = load_notes(&notes, false)?;
            let (train, test) = split_train_test(&notes, ratio, seed)?;
            write_notes(&train_out, &train)?;
            write_notes(&test_out, &test)?;
            log::info!("split {} notes into {} train and {} test", notes.len(), train.len(), test.len());
            Ok(())
        }
        Command::Stats {
            notes,
            retrieved,
            bucket_width,
            csv,
            out,
        } => {
            if bucket_width == 0 {
                bail!(Error::InvalidConfig("--bucket-width must be positive".into()));
            }
            let notes = load_notes(&notes, false)?;
            let lengths: Vec<usize> = notes.iter().map(|n| Tokenizer.count(&n.text)).collect();
            let stats = stats_with_lengths(&notes, &lengths, bucket_width);
            let retrieved = retrieved.as_deref().map(load_retrieved).transpose()?;
            if csv {
                let mut body = String::from("series,lower,upper,count\n");
                let mut series = vec![("tokens", lengths)];
                if let Some(r) = &retrieved {
                    series.push(("before", r.iter().map(|l| l.tokens_before).collect()));
                    series.push(("after", r.iter().map(|l| l.tokens_after).collect()));
                }
                for (name, lengths) in series {
                    for b in summarize_lengths(&lengths, bucket_width).map(|s| s.histogram).unwrap_or_default() {
                        body.push_str(&format!("{name},{},{},{}\n", b.lower, b.upper, b.count));
                    }
                }
                return emit(out.as_deref(), &body);
            }
            let retrieval = retrieved.map(|r| {
                let before: Vec<usize> = r.iter().map(|l| l.tokens_before).collect();
                let after: Vec<usize> = r.iter().map(|l| l.tokens_after).collect();
                json!({
                    "before": summarize_lengths(&before, bucket_width),
                    "after": summarize_lengths(&after, bucket_width),
                    "notes": r.iter().map(|l| json!({
                        "id": l.id,
                        "tokens_before": l.tokens_before,
                        "tokens_after": l.tokens_after,
                    })).collect::<Vec<_>>(),
                })
            });
            let body = json!({"corpus": stats, "retrieval": retrieval});
            emit(out.as_deref(), &(serde_json::to_string_pretty(&body)? + "\n"))
        }
    }
}
