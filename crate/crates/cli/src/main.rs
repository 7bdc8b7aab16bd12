mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::{RetrievalFlags, TrainFlags};

// Kept in step with CHECKPOINT_FORMAT_VERSION by a test below.
const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format 1)");

/// Extract menstrual-health attributes from clinical notes.
#[derive(Debug, Parser)]
#[command(name = "mensx", version, long_version = LONG_VERSION)]
pub struct Cli {
    /// JSON config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Task templates and verbalizers (JSON). Defaults are built in.
    #[arg(long, global = true)]
    tasks: Option<PathBuf>,
    /// Worker threads for per-note stages. Output order never depends on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split notes into segments; JSON lines {"id","ordinal","text"}.
    Segment {
        #[arg(long)]
        notes: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep the top-k segments of each note.
    Retrieve {
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        retrieval: RetrievalFlags,
    },
    /// Train a model and write it as JSON.
    Train {
        #[arg(long)]
        notes: PathBuf,
        /// Precomputed retrieve output to use as model input.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value = "on", value_parser = commands::parse_input_mode)]
        retrieval: mensx_core::retrieval::InputMode,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        retrieval_flags: RetrievalFlags,
    },
    /// Write predictions.jsonl for a set of notes.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value = "on", value_parser = commands::parse_input_mode)]
        retrieval: mensx_core::retrieval::InputMode,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        retrieval_flags: RetrievalFlags,
    },
    /// Score predictions against gold, or compare two reports.
    Evaluate {
        #[arg(long, required_unless_present = "compare")]
        predictions: Option<PathBuf>,
        #[arg(long, required_unless_present = "compare")]
        gold: Option<PathBuf>,
        /// Two report files A and B; prints B minus A.
        #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with_all = ["predictions", "gold"])]
        compare: Option<Vec<PathBuf>>,
        /// JSON report (or delta table) destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print CSV instead of the aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// k-fold cross-validation, optionally over several learning rates.
    Cv {
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value = "on", value_parser = commands::parse_input_mode)]
        retrieval: mensx_core::retrieval::InputMode,
        #[arg(long)]
        folds: Option<usize>,
        /// Comma-separated learning rates to choose from.
        #[arg(long, value_delimiter = ',')]
        lr_grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Retrain on all notes and save the final model here.
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        retrieval_flags: RetrievalFlags,
    },
    /// Few-shot baseline against a generative HTTP service.
    Icl {
        #[arg(long)]
        url: Option<String>,
        /// Labelled notes used as examples; three synthetic ones by default.
        #[arg(long)]
        shots_file: Option<PathBuf>,
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_tokens: Option<u32>,
        #[arg(long)]
        max_concurrency: Option<usize>,
        /// Map verbalizer words to labels when no exact label is given.
        #[arg(long)]
        lenient: bool,
    },
    /// Generate synthetic labelled notes.
    Synth {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// JSON label-distribution profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Boilerplate before the first mention, as MIN-MAX tokens.
        #[arg(long, value_parser = commands::parse_range)]
        distractor_prefix: Option<(usize, usize)>,
    },
    /// Shuffle and split labelled notes into train and test files.
    Split {
        #[arg(long)]
        notes: PathBuf,
        #[arg(long, default_value_t = 0.65)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Label counts and token-length histograms.
    Stats {
        #[arg(long)]
        notes: PathBuf,
        /// Retrieve output; adds before/after token counts per note.
        #[arg(long)]
        retrieved: Option<PathBuf>,
        #[arg(long, default_value_t = mensx_core::corpus::DEFAULT_HISTOGRAM_WIDTH)]
        bucket_width: usize,
        /// Print the histogram as CSV instead of JSON.
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let environmental = err.chain().any(|c| {
        c.downcast_ref::<mensx_core::Error>().is_some_and(|e| e.is_environmental())
            || c.downcast_ref::<std::io::Error>().is_some()
    });
    if environmental {
        2
    } else {
        1
    }
}

/// The error and its causes, skipping causes already quoted by an outer
/// message.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
