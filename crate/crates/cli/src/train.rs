use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use hnmc::data::SequenceBatch;
use hnmc::nn::{build_model, ArchitectureSpec};
use hnmc::train::{evaluate, train_with, EpochRecord, MetricKind, TrainConfig, TrainingData, CHECKPOINT_VERSION};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::TrainArgs;
use crate::data::{load_training, DataDescription};
use crate::manifest::{mean_ci95, percent, write_manifest, MANIFEST_VERSION};

#[derive(Debug, Serialize)]
struct RunRecord {
    seed: u64,
    checkpoint: PathBuf,
    log: PathBuf,
    best_epoch: usize,
    score: f64,
    final_loss: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    metric: MetricKind,
    /// Split the scores were measured on.
    split: &'static str,
    runs: usize,
    mean: f64,
    ci95_half_width: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TrainManifest {
    manifest_version: u32,
    checkpoint_version: u32,
    tool_version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    spec: ArchitectureSpec,
    /// Training configuration; `seed` is the first of `seeds`.
    config: TrainConfig,
    data: DataDescription,
    embeddings: hnmc::data::EmbeddingSource,
    seeds: Vec<u64>,
    runs: Vec<RunRecord>,
    summary: Summary,
}

fn config_from(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        optimizer: args.optimizer.into(),
        seed: args.seed,
        shuffle: !args.no_shuffle,
        clip: args.clip,
        metric: args.metric.into(),
        ..TrainConfig::default()
    };
    if args.arch == 1 {
        if args.lr_layers.is_some() {
            bail!("--lr-layers applies to architectures 2 and 3; use --lr for architecture 1");
        }
        if let Some(lr) = args.lr {
            config.lr_model = lr;
        }
    } else {
        if args.lr.is_some() {
            bail!("architecture {} takes --lr-layers (one rate per layer), not --lr", args.arch);
        }
        if let Some(lrs) = &args.lr_layers {
            config.lr_layers = lrs.clone();
        }
    }
    Ok(config)
}

pub fn run(args: &TrainArgs, argv: &[String]) -> Result<()> {
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let base_config = config_from(args)?;
    let loaded = load_training(&args.data, args.seed)?;
    let spec = ArchitectureSpec {
        kind: args.model,
        arch: args.arch,
        hidden_size: args.hidden_size,
        n_labels: loaded.train.label_map.len(),
        embedding_dim: loaded.table.dim(),
        activation: args.activation.into(),
        kernel_hidden: args.kernel_hidden.clone(),
    };
    spec.validate()?;
    base_config.validate(&spec)?;

    let data = TrainingData {
        train: SequenceBatch::embed(&loaded.train, &loaded.table),
        dev: loaded.dev.as_ref().map(|d| SequenceBatch::embed(d, &loaded.table)),
        labels: loaded.train.label_map.clone(),
        embeddings: loaded.source.clone(),
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let seeds: Vec<u64> = (0..args.repeats as u64).map(|k| args.seed + k).collect();
    let stderr = Mutex::new(());
    let runs = seeds
        .par_iter()
        .map(|&seed| -> Result<RunRecord> {
            let config = TrainConfig {
                seed,
                ..base_config.clone()
            };
            let model = build_model(&spec, seed)?;
            let outcome = train_with(model, &data, &config, |r: &EpochRecord| {
                if !args.quiet {
                    let _guard = stderr.lock();
                    let dev = r.dev_score.map(|s| format!("  dev {}", percent(s))).unwrap_or_default();
                    eprintln!("seed {seed} epoch {:>3}/{}  loss {:.4}{dev}", r.epoch, config.epochs, r.mean_loss);
                }
            })
            .with_context(|| format!("training with seed {seed}"))?;
            let ckpt_path = args.out.join(format!("seed-{seed}.ckpt"));
            outcome.checkpoint.save(&ckpt_path)?;
            let log_path = args.out.join(format!("seed-{seed}.log.json"));
            write_manifest(&log_path, &outcome.log)?;
            let score = match outcome.checkpoint.meta.dev_score {
                Some(s) => s,
                None => evaluate(&outcome.model, &data.train, config.metric, &data.labels)?,
            };
            Ok(RunRecord {
                seed,
                checkpoint: ckpt_path,
                log: log_path,
                best_epoch: outcome.checkpoint.meta.epoch,
                score,
                final_loss: outcome.log.last().map_or(f64::NAN, |r| r.mean_loss),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let scores: Vec<f64> = runs.iter().map(|r| r.score).collect();
    let (mean, hw) = mean_ci95(&scores);
    let split = if data.dev.is_some() { "dev" } else { "train" };
    let metric_name = match base_config.metric {
        MetricKind::Accuracy => "accuracy",
        MetricKind::SpanF1 => "span F1",
    };
    for r in &runs {
        println!("seed {}: {split} {metric_name} {} (epoch {})", r.seed, percent(r.score), r.best_epoch);
    }
    match hw {
        Some(hw) => println!("{} arch {}: {} ± {:.2} over {} runs", spec.kind, spec.arch, percent(mean), 100.0 * hw, runs.len()),
        None => println!("{} arch {}: {}", spec.kind, spec.arch, percent(mean)),
    }

    let metric = base_config.metric;
    let manifest = TrainManifest {
        manifest_version: MANIFEST_VERSION,
        checkpoint_version: CHECKPOINT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command: "train",
        argv: argv.to_vec(),
        spec,
        config: base_config,
        data: loaded.description,
        embeddings: loaded.source,
        seeds,
        runs,
        summary: Summary {
            metric,
            split,
            runs: scores.len(),
            mean,
            ci95_half_width: hw,
        },
    };
    let path = args.out.join("manifest.json");
    write_manifest(&path, &manifest)?;
    println!("wrote {}", path.display());
    Ok(())
}
