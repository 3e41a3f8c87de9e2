mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use esdd_core::eval::{read_score_file, score_dataset, write_score_file};
use esdd_core::features::{load_manifest, synthesize_dataset, DirSource, MemorySource};
use esdd_core::mhfa::{load_checkpoint, model_grad_check};
use esdd_core::trainer::{fit, TrainData};
use esdd_core::{compute_eer, fuse_scores, ManifestEntry, ScoreRecord, Split};

use config::{Layers, RunConfig, UnknownKey};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

type Overrides = Vec<(String, String)>;

/// Synthetic-data deepfake detection back-end: synthesis, training, scoring,
/// EER, fusion and gradient self-check.
///
/// Any configuration field can be overridden with a dotted flag, e.g.
/// `--train.base_lr 5e-4` or `--model.dsu_enabled=true`.
#[derive(Parser)]
#[command(name = "esdd", version)]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Top-level seed, propagated to the synth and train sections.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "PATH")]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (ESDF files and manifest.jsonl).
    Synth {
        /// Output directory [default: <workdir>/data]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the train split, selecting on dev; writes checkpoints and log.
    Train,
    /// Score one split with a checkpoint.
    Score {
        #[arg(long, default_value = "eval_unseen", value_parser = parse_split)]
        split: Split,
        /// Score file [default: <workdir>/scores_<split>.txt]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the equal error rate of a score file.
    Eer { scores: PathBuf },
    /// Fuse score files (or `fusion.systems` when none are given).
    Fuse {
        scores: Vec<PathBuf>,
        /// Fused score file [default: <workdir>/fused.txt]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full model's gradients.
    Gradcheck,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("expected one of train, dev, eval_seen, eval_unseen; got {s:?}"))
}

/// Pulls `--section.key value` and `--section.key=value` out of the argument
/// list; clap sees the rest.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("--{key} needs a value"))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UnknownKey>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    let cfg = RunConfig::resolve(Layers {
        file: cli.config.as_deref(),
        seed: cli.seed,
        workdir: cli.workdir.as_deref(),
        overrides,
    })?;
    match cli.command {
        Command::Synth { out } => synth(&cfg, out),
        Command::Train => train(&cfg),
        Command::Score { split, out } => score(&cfg, split, out),
        Command::Eer { scores } => {
            let eer = compute_eer(&read_scores(&scores)?)?;
            println!("EER {:.6}", eer.eer);
            Ok(())
        }
        Command::Fuse { scores, out } => fuse(&cfg, scores, out),
        Command::Gradcheck => {
            let report = model_grad_check(cfg.seed, None)?;
            println!(
                "max relative error {:.3e} over {} scalars",
                report.max_rel_error, report.checked
            );
            if report.max_rel_error > GRADCHECK_TOLERANCE {
                bail!(
                    "gradient check failed: {:.3e} exceeds {GRADCHECK_TOLERANCE:e} (parameter {}, element {})",
                    report.max_rel_error,
                    report.worst.0,
                    report.worst.1
                );
            }
            Ok(())
        }
    }
}

fn synth(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    cfg.archive()?;
    let out = out.unwrap_or_else(|| cfg.workdir().join("data"));
    let ds = synthesize_dataset(&cfg.synth, &out)?;
    println!("wrote {} utterances to {}", ds.entries().len(), out.display());
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
    load_manifest(BufReader::new(file)).with_context(|| format!("reading manifest {}", path.display()))
}

fn dataset_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn train(cfg: &RunConfig) -> Result<()> {
    cfg.archive()?;
    let manifest = cfg.manifest();
    let entries = read_manifest(&manifest)?;
    let pick = |s: Split| entries.iter().filter(|e| e.split == s).cloned().collect::<Vec<_>>();
    let (train, dev) = (pick(Split::Train), pick(Split::Dev));
    if train.is_empty() {
        bail!("manifest {} has no train entries", manifest.display());
    }
    let disk = DirSource::new(dataset_root(&manifest));
    let both: Vec<_> = train.iter().chain(&dev).cloned().collect();
    let source = MemorySource::materialize(&disk, &both)?;
    let data = TrainData {
        train: &train,
        dev: &dev,
        source: &source,
    };
    let out = fit(&cfg.model, &cfg.train, data, Some(cfg.workdir()))?;
    for e in &out.log {
        let dev = e.dev_eer.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!("epoch {} loss {:.6} dev_eer {dev}", e.epoch, e.mean_loss);
    }
    match &out.best {
        Some((epoch, _)) => println!("{} steps; best dev epoch {epoch}", out.steps),
        None => println!("{} steps; no dev selection", out.steps),
    }
    Ok(())
}

fn score(cfg: &RunConfig, split: Split, out: Option<PathBuf>) -> Result<()> {
    cfg.archive()?;
    let ckpt = cfg.checkpoint();
    let (mcfg, params) = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let manifest = cfg.manifest();
    let entries: Vec<_> = read_manifest(&manifest)?
        .into_iter()
        .filter(|e| e.split == split)
        .collect();
    if entries.is_empty() {
        bail!("manifest {} has no {} entries", manifest.display(), split.as_str());
    }
    let source = DirSource::new(dataset_root(&manifest));
    let records = score_dataset(&params, &mcfg, &entries, &source, cfg.train.eval_frames)?;
    let out = out.unwrap_or_else(|| cfg.workdir().join(format!("scores_{}.txt", split.as_str())));
    write_scores(&out, &records)?;
    println!("scored {} utterances to {}", records.len(), out.display());
    Ok(())
}

fn fuse(cfg: &RunConfig, scores: Vec<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let systems: Vec<PathBuf> = if scores.is_empty() {
        cfg.fusion.systems.iter().map(PathBuf::from).collect()
    } else {
        scores
    };
    if systems.is_empty() {
        bail!("no score files to fuse");
    }
    cfg.archive()?;
    let sets = systems.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?;
    let fused = fuse_scores(&cfg.fusion, &sets)?;
    let out = out.unwrap_or_else(|| cfg.workdir().join("fused.txt"));
    write_scores(&out, &fused)?;
    println!(
        "fused {} systems over {} utterances to {}",
        sets.len(),
        fused.len(),
        out.display()
    );
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let file = File::open(path).with_context(|| format!("opening score file {}", path.display()))?;
    read_score_file(BufReader::new(file)).with_context(|| format!("reading score file {}", path.display()))
}

fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_score_file(records, &mut w)?;
    w.flush()?;
    Ok(())
}
