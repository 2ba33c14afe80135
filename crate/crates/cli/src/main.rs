mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{RunConfig, TrainFlags};
use rrank::checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use rrank::corpus::{eval_pairs, read_interactions, read_rationale_texts, write_interactions, Catalog};
use rrank::evalrank::{compensated_sum, EvalReport};
use rrank::pipeline::{evaluate_test, initial_model, prepare, train_kind};
use rrank::planted::{cluster_embeddings, generate, PlantedConfig};
use rrank::seminit::{write_embeddings_tsv, EMBEDDING_MAGIC};
use rrank::{
    evaluate, load_checkpoint, read_embedding_file, save_checkpoint, write_embedding_file, Candidates, Checkpoint,
    ModelDims, Scorer, TrainReport,
};

const CHECKPOINT_FILE: &str = "model.rrnk";
const CATALOG_FILE: &str = "catalog.tsv";
const REPORT_FILE: &str = "report.json";

#[derive(Parser)]
#[command(name = "rrank", version, about = "Train and evaluate latent-factor rationale rankers")]
struct Cli {
    /// Evaluation threads (default: all cores)
    #[arg(long, global = true, env = "RRANK_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model on one fold (or all five) and evaluate it on the test split
    Train {
        /// TOML file with the same keys as the long flags
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint on an interaction file
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to catalog.tsv next to the checkpoint
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 10)]
        cutoff: usize,
        /// Rank only these rationale ids (one per line) instead of the full catalog
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Per-pair metrics TSV
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// JSON report path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top-k rationales for one (user, item) pair
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
    /// Convert an embedding table between the binary and TSV formats (by extension)
    Convert { input: PathBuf, output: PathBuf },
    /// Summarize a checkpoint or embedding file
    Inspect { path: PathBuf },
    /// Write a synthetic five-fold dataset with planted clusters and matching embeddings
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 768)]
        embedding_dim: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Train { config, flags } => cmd_train(RunConfig::resolve(flags, config.as_deref())?),
        Command::Evaluate {
            checkpoint,
            catalog,
            test,
            cutoff,
            candidates,
            pairs,
            out,
        } => cmd_evaluate(&checkpoint, catalog, &test, cutoff, candidates.as_deref(), pairs.as_deref(), out.as_deref()),
        Command::Rank {
            checkpoint,
            catalog,
            user,
            item,
            k,
        } => cmd_rank(&checkpoint, catalog, &user, &item, k),
        Command::Convert { input, output } => cmd_convert(&input, &output),
        Command::Inspect { path } => cmd_inspect(&path),
        Command::Synth {
            out,
            seed,
            embedding_dim,
            noise,
        } => cmd_synth(&out, seed, embedding_dim, noise),
    }
}

#[derive(Serialize)]
struct FoldReport<'a> {
    fold: usize,
    config: &'a RunConfig,
    dims: [usize; 4],
    train: TrainReport,
    test: EvalReport,
}

fn cmd_train(run: RunConfig) -> Result<()> {
    let table = match &run.embeddings {
        Some(p) => Some(read_embedding_file(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let texts = match &run.texts {
        Some(p) => Some(read_rationale_texts(p)?),
        None => None,
    };
    let mut reports = Vec::new();
    for &k in &run.folds {
        let read = |part: &str| -> Result<Vec<rrank::InteractionRecord>> {
            let p = run.data.join(format!("{part}.{k}.tsv"));
            let parsed = read_interactions(&p).with_context(|| format!("reading {}", p.display()))?;
            if parsed.duplicates_removed > 0 {
                log::warn!("{}: dropped {} repeated rationale ids", p.display(), parsed.duplicates_removed);
            }
            Ok(parsed.records)
        };
        let (train, test) = (read("train")?, read("test")?);
        let mut prepared = prepare(&train, &test, run.validation_fraction, run.train.seed)?;
        if let Some(t) = &texts {
            // texts for rationales outside this fold are irrelevant here
            let known: Vec<(String, String)> = t
                .iter()
                .filter(|(id, _)| prepared.catalog.rationales.get(id).is_some())
                .cloned()
                .collect();
            prepared.catalog.attach_texts(&known)?;
        }
        let model = initial_model(run.model, &prepared, run.dim, table.as_ref(), run.init_scale, run.train.seed)?;
        let (u, i, e) = prepared.catalog.sizes();
        eprintln!(
            "fold {k}: {} model, {u} users, {i} items, {e} rationales, {} triplets, {} validation pairs",
            run.model,
            prepared.triplets.len(),
            prepared.validation.len()
        );
        let (model, train_report) = train_kind(run.model, model, &prepared, &run.train, |r| eprintln!("fold {k} {r}"))?;
        let test_report = evaluate_test(run.model, &model, &prepared, run.train.eval_cutoff, run.train.mu)?;

        let dir = run.out.join(format!("fold-{k}"));
        std::fs::create_dir_all(&dir)?;
        let checkpoint = Checkpoint {
            kind: run.model,
            mu: run.train.mu,
            model,
        };
        save_checkpoint(&checkpoint, &dir.join(CHECKPOINT_FILE))?;
        prepared.catalog.write(BufWriter::new(File::create(dir.join(CATALOG_FILE))?))?;
        let report = FoldReport {
            fold: k,
            config: &run,
            dims: [u, i, e, run.dim],
            train: train_report,
            test: test_report,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(REPORT_FILE))?), &report)?;
        println!("fold {k} (best epoch {})", report.train.best_epoch);
        print!("{}", report.test.to_text());
        reports.push(report.test);
    }
    if reports.len() > 1 {
        let n = reports.len() as f64;
        let mean = |f: fn(&EvalReport) -> f64| compensated_sum(reports.iter().map(f)) / n;
        let summary = serde_json::json!({
            "folds": run.folds,
            "cutoff": run.train.eval_cutoff,
            "ndcg": mean(|r| r.ndcg),
            "precision": mean(|r| r.precision),
            "recall": mean(|r| r.recall),
            "f1": mean(|r| r.f1),
        });
        std::fs::write(run.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        let c = run.train.eval_cutoff;
        println!("mean over {} folds", reports.len());
        println!("ndcg@{c} {:.3}", mean(|r| r.ndcg));
        println!("pre@{c} {:.3}", mean(|r| r.precision));
        println!("rec@{c} {:.3}", mean(|r| r.recall));
        println!("f1@{c} {:.3}", mean(|r| r.f1));
    }
    Ok(())
}

/// Loads a checkpoint and its catalog, checking they describe the same id space.
fn load_pair(checkpoint: &Path, catalog: Option<PathBuf>) -> Result<(Checkpoint, Catalog)> {
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let catalog_path = catalog.unwrap_or_else(|| checkpoint.with_file_name(CATALOG_FILE));
    let file = File::open(&catalog_path).with_context(|| format!("opening {}", catalog_path.display()))?;
    let catalog = Catalog::read(BufReader::new(file)).with_context(|| format!("reading {}", catalog_path.display()))?;
    let dims: ModelDims = ckpt.model.dims();
    if catalog.sizes() != (dims.n_users, dims.n_items, dims.n_rationales) {
        bail!(
            "catalog {} has sizes {:?} but the checkpoint was trained on {:?}",
            catalog_path.display(),
            catalog.sizes(),
            (dims.n_users, dims.n_items, dims.n_rationales)
        );
    }
    Ok((ckpt, catalog))
}

fn cmd_evaluate(
    checkpoint: &Path,
    catalog: Option<PathBuf>,
    test: &Path,
    cutoff: usize,
    candidates: Option<&Path>,
    pairs_out: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let (ckpt, catalog) = load_pair(checkpoint, catalog)?;
    let records = read_interactions(test).with_context(|| format!("reading {}", test.display()))?.records;
    let pairs = eval_pairs(&catalog, &records).context("test file does not match the checkpoint's catalog")?;
    let candidates = match candidates {
        None => Candidates::All,
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let ids = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|id| catalog.rationale(id))
                .collect::<rrank::Result<Vec<_>>>()?;
            Candidates::Subset(ids)
        }
    };
    let report = evaluate(
        &ckpt.model,
        &pairs,
        &candidates,
        cutoff,
        ckpt.mu,
        ckpt.kind.score_mode(),
    )?;
    print!("{}", report.to_text());
    if let Some(p) = pairs_out {
        report.write_pairs_tsv(&catalog, BufWriter::new(File::create(p)?))?;
    }
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_rank(checkpoint: &Path, catalog: Option<PathBuf>, user: &str, item: &str, k: usize) -> Result<()> {
    let (ckpt, catalog) = load_pair(checkpoint, catalog)?;
    let (u, i) = (catalog.user(user)?, catalog.item(item)?);
    let scorer = Scorer::new(&ckpt.model, ckpt.kind.score_mode(), ckpt.mu)?;
    let out = std::io::stdout();
    let mut out = out.lock();
    for (rank, (e, score)) in scorer.rank_all(u, i, k)?.0.into_iter().enumerate() {
        let id = catalog.rationales.id(e).unwrap_or("?");
        match catalog.text(e) {
            Some(text) => writeln!(out, "{}\t{score:.6}\t{id}\t{text}", rank + 1)?,
            None => writeln!(out, "{}\t{score:.6}\t{id}", rank + 1)?,
        }
    }
    Ok(())
}

fn is_tsv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "tsv")
}

fn cmd_convert(input: &Path, output: &Path) -> Result<()> {
    let table = read_embedding_file(input).with_context(|| format!("reading {}", input.display()))?;
    if is_tsv(output) {
        write_embeddings_tsv(&table, BufWriter::new(File::create(output)?))?;
    } else {
        write_embedding_file(&table, output)?;
    }
    eprintln!("{} embeddings of dim {} -> {}", table.len(), table.dim(), output.display());
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_exact(&mut magic)
        .context("file shorter than a header")?;
    if &magic == CHECKPOINT_MAGIC {
        let c = load_checkpoint(path)?;
        let d = c.model.dims();
        println!("checkpoint v{CHECKPOINT_VERSION}");
        println!("model {}", c.kind);
        println!("mu {}", c.mu);
        println!("users {}\nitems {}\nrationales {}\ndim {}", d.n_users, d.n_items, d.n_rationales, d.d);
        if let Some(x) = &c.model.extras {
            println!("d_sem {}", x.d_sem());
        }
    } else if &magic == EMBEDDING_MAGIC || is_tsv(path) {
        let t = read_embedding_file(path)?;
        println!("embeddings");
        println!("count {}\ndim {}", t.len(), t.dim());
        let first = t.iter().next().map(|(id, _)| id.to_string());
        if let Some(id) = first {
            println!("first {id}");
        }
    } else {
        bail!("{}: neither a checkpoint nor an embedding file", path.display());
    }
    Ok(())
}

fn cmd_synth(out: &Path, seed: u64, embedding_dim: usize, noise: f64) -> Result<()> {
    let cfg = PlantedConfig {
        seed,
        ..Default::default()
    };
    let data = generate(&cfg)?;
    std::fs::create_dir_all(out)?;
    for k in 0..5 {
        let (test, train): (Vec<_>, Vec<_>) = data.records.iter().enumerate().partition(|(n, _)| n % 5 == k);
        let strip = |v: Vec<(usize, &rrank::InteractionRecord)>| v.into_iter().map(|(_, r)| r.clone()).collect::<Vec<_>>();
        write_interactions(&strip(train), BufWriter::new(File::create(out.join(format!("train.{k}.tsv")))?))?;
        write_interactions(&strip(test), BufWriter::new(File::create(out.join(format!("test.{k}.tsv")))?))?;
    }
    let table = cluster_embeddings(cfg.n_rationales, cfg.n_clusters, embedding_dim, noise, seed)?;
    write_embedding_file(&table, &out.join("embeddings.sebp"))?;
    let mut texts = BufWriter::new(File::create(out.join("texts.tsv"))?);
    for e in 0..cfg.n_rationales {
        writeln!(texts, "e{e}\tsynthetic rationale {e} from cluster {}", e % cfg.n_clusters)?;
    }
    texts.flush()?;
    eprintln!(
        "{} records ({} triplets) in 5 folds, {} embeddings -> {}",
        data.records.len(),
        data.triplet_count(),
        table.len(),
        out.display()
    );
    Ok(())
}
