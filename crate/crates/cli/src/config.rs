//! The JSON config file and flag > config > default resolution.

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use mensx_core::corpus::TaskId;
use mensx_core::retrieval::{ProviderConfig, RetrievalConfig, DEFAULT_HASH_DIM};
use mensx_core::training::{TrainConfig, TrainMode};
use mensx_core::Error;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Pbl,
    Mtpbl,
    Direct,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub query: Option<String>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub provider: Option<ProviderKind>,
    pub embed_url: Option<String>,
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<ModeKind>,
    pub task: Option<TaskId>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IclSection {
    pub url: Option<String>,
    pub shots: Option<PathBuf>,
    pub max_tokens: Option<u32>,
    pub max_concurrency: Option<usize>,
    pub lenient: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub retrieval: RetrievalSection,
    pub train: TrainSection,
    pub cv: CvSection,
    pub tasks: Option<PathBuf>,
    pub icl: IclSection,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: AppConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// Picks flag over config over default and logs where the value came from.
pub fn resolve<T: Debug>(name: &str, flag: Option<T>, config: Option<T>, default: T) -> T {
    let (value, source) = match (flag, config) {
        (Some(v), _) => (v, "flag"),
        (None, Some(v)) => (v, "config"),
        (None, None) => (default, "default"),
    };
    log::info!("{name} = {value:?} ({source})");
    value
}

/// Retrieval flags as parsed from the command line.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct RetrievalFlags {
    /// Number of segments to keep per note.
    #[arg(long)]
    pub k: Option<usize>,
    /// Weight of the lexical score in the fused score.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

pub fn retrieval_config(flags: &RetrievalFlags, cfg: &RetrievalSection) -> Result<RetrievalConfig> {
    let d = RetrievalConfig::default();
    let provider = resolve("retrieval.provider", flags.provider, cfg.provider, ProviderKind::Hash);
    let embed_url = resolve("retrieval.embed_url", flags.embed_url.clone(), cfg.embed_url.clone(), String::new());
    let embed_dim = resolve("retrieval.embed_dim", flags.embed_dim.map(Some), cfg.embed_dim.map(Some), None);
    let provider = match provider {
        ProviderKind::Hash => ProviderConfig::Hash {
            dim: embed_dim.unwrap_or(DEFAULT_HASH_DIM),
        },
        ProviderKind::Http if embed_url.is_empty() => {
            return Err(Error::InvalidConfig("provider http needs --embed-url".into()).into())
        }
        ProviderKind::Http => ProviderConfig::Http {
            url: embed_url,
            dim: embed_dim,
        },
    };
    let out = RetrievalConfig {
        query: resolve("retrieval.query", flags.query.clone(), cfg.query.clone(), d.query),
        k: resolve("retrieval.k", flags.k, cfg.k, d.k),
        alpha: resolve("retrieval.alpha", flags.alpha, cfg.alpha, d.alpha),
        k1: resolve("retrieval.k1", flags.k1, cfg.k1, d.k1),
        b: resolve("retrieval.b", flags.b, cfg.b, d.b),
        provider,
    };
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Default, Clone, clap::Args)]
pub struct TrainFlags {
    #[arg(long, value_enum)]
    pub mode: Option<ModeKind>,
    /// Restrict pbl or direct training to one task.
    #[arg(long)]
    pub task: Option<TaskId>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train_config(flags: &TrainFlags, cfg: &TrainSection) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let mode = resolve("train.mode", flags.mode, cfg.mode, ModeKind::Mtpbl);
    let task = resolve("train.task", flags.task.map(Some), cfg.task.map(Some), None);
    let mode = match (mode, task) {
        (ModeKind::Mtpbl, Some(t)) => {
            return Err(Error::InvalidConfig(format!("mode mtpbl trains all tasks; drop task {t}")).into())
        }
        (ModeKind::Mtpbl, None) => TrainMode::MultiTask,
        (ModeKind::Pbl, t) => TrainMode::SingleTask(t),
        (ModeKind::Direct, t) => TrainMode::Direct(t),
    };
    let out = TrainConfig {
        learning_rate: resolve("train.lr", flags.lr, cfg.lr, d.learning_rate),
        batch_size: resolve("train.batch_size", flags.batch_size, cfg.batch_size, d.batch_size),
        epochs: resolve("train.epochs", flags.epochs, cfg.epochs, d.epochs),
        seed: resolve("train.seed", flags.seed, cfg.seed, d.seed),
        mode,
    };
    out.validate()?;
    Ok(out)
}
