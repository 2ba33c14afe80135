//! Run configuration: command-line flags over a TOML file over defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use rrank::pipeline::{DEFAULT_INIT_SCALE, DEFAULT_VALIDATION_FRACTION};
use rrank::{ModelKind, TrainConfig};

/// Flags shared by `train`; every field is optional so the config file can fill gaps.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainFlags {
    /// Directory holding train.<k>.tsv and test.<k>.tsv
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rationale texts (`id<TAB>text`), stored in the catalog for `rank`
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// rand, pitf, bper, bper-plus or se-bper
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Negatives per side per triplet
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Weight of the PITF rationale term
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Half-width of the uniform random initialization
    #[arg(long)]
    pub init_scale: Option<f32>,
    /// Fraction of train records held out for early stopping
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Embedding table (.sebp, or .tsv for the text fallback)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Run folds 0..4 and report the means
    #[arg(long)]
    #[serde(default)]
    pub all_folds: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainFlags {
    /// Fills every unset field from `base`.
    fn or(self, base: TrainFlags) -> TrainFlags {
        TrainFlags {
            data: self.data.or(base.data),
            texts: self.texts.or(base.texts),
            model: self.model.or(base.model),
            dim: self.dim.or(base.dim),
            lr: self.lr.or(base.lr),
            l2: self.l2.or(base.l2),
            negatives: self.negatives.or(base.negatives),
            mu: self.mu.or(base.mu),
            alpha: self.alpha.or(base.alpha),
            epochs: self.epochs.or(base.epochs),
            patience: self.patience.or(base.patience),
            batch: self.batch.or(base.batch),
            seed: self.seed.or(base.seed),
            init_scale: self.init_scale.or(base.init_scale),
            validation_fraction: self.validation_fraction.or(base.validation_fraction),
            embeddings: self.embeddings.or(base.embeddings),
            cutoff: self.cutoff.or(base.cutoff),
            fold: self.fold.or(base.fold),
            all_folds: self.all_folds || base.all_folds,
            out: self.out.or(base.out),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub texts: Option<PathBuf>,
    #[serde(serialize_with = "as_display")]
    pub model: ModelKind,
    pub dim: usize,
    pub init_scale: f32,
    pub validation_fraction: f64,
    pub embeddings: Option<PathBuf>,
    pub folds: Vec<usize>,
    pub out: PathBuf,
    pub train: TrainConfig,
}

fn as_display<S: serde::Serializer>(kind: &ModelKind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(kind)
}

fn read_file_config(path: &Path) -> Result<TrainFlags> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Paths in the config file are taken relative to the file itself.
fn rebase(flags: &mut TrainFlags, dir: &Path) {
    for p in [&mut flags.data, &mut flags.texts, &mut flags.embeddings, &mut flags.out]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
}

impl RunConfig {
    pub fn resolve(cli: TrainFlags, config_file: Option<&Path>) -> Result<RunConfig> {
        let file = match config_file {
            Some(path) => {
                let mut f = read_file_config(path)?;
                rebase(&mut f, path.parent().unwrap_or(Path::new(".")));
                f
            }
            None => TrainFlags::default(),
        };
        let f = cli.or(file);
        let defaults = TrainConfig::default();

        let model: ModelKind = f.model.as_deref().unwrap_or("bper").parse()?;
        let embeddings = f.embeddings;
        if model.needs_embeddings() {
            match &embeddings {
                None => bail!("--model {model} needs --embeddings"),
                Some(p) if !p.is_file() => bail!("embedding file {} does not exist", p.display()),
                _ => {}
            }
        }
        let data = f.data.context("--data is required")?;
        if f.all_folds && f.fold.is_some() {
            bail!("--fold and --all-folds are mutually exclusive");
        }
        let folds = if f.all_folds { (0..5).collect() } else { vec![f.fold.unwrap_or(0)] };
        for k in &folds {
            for part in ["train", "test"] {
                let p = data.join(format!("{part}.{k}.tsv"));
                if !p.is_file() {
                    bail!("missing {}", p.display());
                }
            }
        }
        if let Some(t) = &f.texts {
            if !t.is_file() {
                bail!("rationale text file {} does not exist", t.display());
            }
        }
        let train = TrainConfig {
            learning_rate: f.lr.unwrap_or(defaults.learning_rate),
            l2: f.l2.unwrap_or(defaults.l2),
            n_negatives: f.negatives.unwrap_or(defaults.n_negatives),
            mu: f.mu.unwrap_or(defaults.mu),
            alpha: f.alpha.unwrap_or(defaults.alpha),
            max_epochs: f.epochs.unwrap_or(defaults.max_epochs),
            patience: f.patience.unwrap_or(defaults.patience),
            batch_size: f.batch.unwrap_or(defaults.batch_size),
            seed: f.seed.unwrap_or(defaults.seed),
            mode: model.score_mode(),
            eval_cutoff: f.cutoff.unwrap_or(defaults.eval_cutoff),
        };
        train.validate()?;
        let dim = f.dim.unwrap_or(if model.needs_embeddings() { 768 } else { 64 });
        if dim == 0 {
            bail!("--dim must be at least 1");
        }
        Ok(RunConfig {
            data,
            texts: f.texts,
            model,
            dim,
            init_scale: f.init_scale.unwrap_or(DEFAULT_INIT_SCALE),
            validation_fraction: f.validation_fraction.unwrap_or(DEFAULT_VALIDATION_FRACTION),
            embeddings,
            folds,
            out: f.out.unwrap_or_else(|| PathBuf::from("rrank-out")),
            train,
        })
    }
}
