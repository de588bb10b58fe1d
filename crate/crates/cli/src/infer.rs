use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use hnmc::data::{parse_rows, read_conll_frozen, synth_corpus, write_rows, Columns, SequenceBatch, Split};
use hnmc::train::{evaluate as score_model, predict_all, Checkpoint, MetricKind};
use serde::Serialize;

use crate::args::{EvaluateArgs, PredictArgs, SplitArg};
use crate::data::checkpoint_table;
use crate::manifest::{percent, write_manifest, MANIFEST_VERSION};

fn load_checkpoint(path: &PathBuf) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

#[derive(Serialize)]
struct EvaluateManifest<'a> {
    manifest_version: u32,
    tool_version: &'static str,
    command: &'static str,
    argv: &'a [String],
    checkpoint: &'a PathBuf,
    metric: MetricKind,
    sequences: usize,
    score: f64,
}

pub fn evaluate(args: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model()?;
    let meta = &ckpt.meta;
    let table = checkpoint_table(&meta.embeddings, args.embeddings.as_ref(), meta.spec.embedding_dim)?;
    let corpus = match (&args.input, args.synthetic) {
        (Some(path), _) => {
            let columns = Columns {
                token: args.token_column,
                label: args.label_column,
            };
            read_conll_frozen(path, columns, &meta.labels, Split::Test)
                .with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(kind)) => {
            let split = if args.split == SplitArg::Dev { Split::Dev } else { Split::Test };
            if args.size == 0 {
                bail!("--size must be at least 1");
            }
            let (corpus, _) = synth_corpus(kind, args.data_seed, args.size, split);
            if corpus.label_map != meta.labels {
                bail!("the checkpoint was not trained on {kind} labels");
            }
            corpus
        }
        (None, None) => bail!("give either --input PATH or --synthetic KIND"),
    };
    let metric = args.metric.map_or(meta.config.metric, MetricKind::from);
    let batch = SequenceBatch::embed(&corpus, &table);
    let score = score_model(&model, &batch, metric, &meta.labels)?;
    let name = match metric {
        MetricKind::Accuracy => "accuracy",
        MetricKind::SpanF1 => "span F1",
    };
    println!("{name} {} over {} sequences", percent(score), batch.len());
    if let Some(path) = &args.manifest {
        write_manifest(
            path,
            &EvaluateManifest {
                manifest_version: MANIFEST_VERSION,
                tool_version: env!("CARGO_PKG_VERSION"),
                command: "evaluate",
                argv,
                checkpoint: &args.checkpoint,
                metric,
                sequences: batch.len(),
                score,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictManifest<'a> {
    manifest_version: u32,
    tool_version: &'static str,
    command: &'static str,
    argv: &'a [String],
    checkpoint: &'a PathBuf,
    input: &'a PathBuf,
    output: &'a PathBuf,
    sequences: usize,
}

pub fn predict(args: &PredictArgs, argv: &[String]) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model()?;
    let meta = &ckpt.meta;
    let table = checkpoint_table(&meta.embeddings, args.embeddings.as_ref(), meta.spec.embedding_dim)?;
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let mut rows = parse_rows(&text)?;
    let mut inputs = Vec::with_capacity(rows.len());
    for sentence in &rows {
        let mut tokens = Vec::with_capacity(sentence.len());
        for (line, fields) in sentence {
            match fields.get(args.token_column) {
                Some(t) => tokens.push(t.as_str()),
                None => bail!("line {line}: no column {}", args.token_column),
            }
        }
        inputs.push(table.embed(&tokens));
    }
    let predictions = predict_all(&model, &inputs)?;
    for (sentence, labels) in rows.iter_mut().zip(&predictions) {
        for ((_, fields), &l) in sentence.iter_mut().zip(labels) {
            fields.push(meta.labels.name(l).expect("model labels come from the checkpoint").to_string());
        }
    }
    let mut out = Vec::new();
    write_rows(&mut out, &rows)?;
    fs::write(&args.output, out).with_context(|| format!("writing {}", args.output.display()))?;
    println!("labelled {} sequences into {}", rows.len(), args.output.display());
    if let Some(path) = &args.manifest {
        write_manifest(
            path,
            &PredictManifest {
                manifest_version: MANIFEST_VERSION,
                tool_version: env!("CARGO_PKG_VERSION"),
                command: "predict",
                argv,
                checkpoint: &args.checkpoint,
                input: &args.input,
                output: &args.output,
                sequences: rows.len(),
            },
        )?;
    }
    Ok(())
}
