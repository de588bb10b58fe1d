use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hnmc::data::{
    load_embeddings, read_conll, read_conll_frozen, synth_corpus, Columns, Corpus, EmbeddingSource, EmbeddingTable,
    Split, SynthKind,
};
use serde::Serialize;

use crate::args::DataArgs;

/// Provenance of the training data, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataDescription {
    Synthetic {
        kind: SynthKind,
        data_seed: u64,
        train_size: usize,
        dev_size: usize,
    },
    Conll {
        train: PathBuf,
        dev: Option<PathBuf>,
        token_column: usize,
        label_column: Option<usize>,
    },
}

pub struct Loaded {
    pub train: Corpus,
    pub dev: Option<Corpus>,
    pub table: EmbeddingTable,
    pub source: EmbeddingSource,
    pub description: DataDescription,
}

fn absolute(path: &Path) -> Result<PathBuf> {
    path.canonicalize().with_context(|| format!("cannot resolve {}", path.display()))
}

/// Loads a table from `path` and records it as the embedding source.
pub fn file_embeddings(path: &PathBuf, lowercase: bool) -> Result<(EmbeddingTable, EmbeddingSource)> {
    let table = load_embeddings(path, lowercase).with_context(|| format!("loading embeddings {}", path.display()))?;
    let source = EmbeddingSource::File {
        path: absolute(path)?,
        dim: table.dim(),
        lowercase,
    };
    Ok((table, source))
}

pub fn load_training(args: &DataArgs, default_seed: u64) -> Result<Loaded> {
    if let Some(kind) = args.synthetic {
        if args.train_size == 0 || args.dev_size == 0 {
            bail!("--train-size and --dev-size must be at least 1");
        }
        let data_seed = args.data_seed.unwrap_or(default_seed);
        let (train, table) = synth_corpus(kind, data_seed, args.train_size, Split::Train);
        let (dev, _) = synth_corpus(kind, data_seed, args.dev_size, Split::Dev);
        let source = EmbeddingSource::OneHot {
            vocab: table.words().to_vec(),
            lowercase: false,
        };
        return Ok(Loaded {
            train,
            dev: Some(dev),
            table,
            source,
            description: DataDescription::Synthetic {
                kind,
                data_seed,
                train_size: args.train_size,
                dev_size: args.dev_size,
            },
        });
    }
    let Some(train_path) = &args.train else {
        bail!("give either --train PATH or --synthetic KIND");
    };
    let columns = Columns {
        token: args.token_column,
        label: args.label_column,
    };
    let train = read_conll(train_path, columns).with_context(|| format!("reading {}", train_path.display()))?;
    let dev = match &args.dev {
        Some(p) => Some(
            read_conll_frozen(p, columns, &train.label_map, Split::Dev)
                .with_context(|| format!("reading {}", p.display()))?,
        ),
        None => None,
    };
    let (table, source) = match (&args.embeddings, args.one_hot) {
        (Some(p), _) => file_embeddings(p, args.lowercase)?,
        (None, true) => {
            let mut vocab: Vec<String> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for s in &train.sequences {
                for t in &s.tokens {
                    let key = if args.lowercase { t.to_lowercase() } else { t.clone() };
                    if seen.insert(key.clone()) {
                        vocab.push(key);
                    }
                }
            }
            let table = EmbeddingTable::one_hot_with(&vocab, args.lowercase);
            let source = EmbeddingSource::OneHot {
                vocab,
                lowercase: args.lowercase,
            };
            (table, source)
        }
        (None, false) => bail!("CoNLL training needs --embeddings PATH or --one-hot"),
    };
    Ok(Loaded {
        train,
        dev,
        table,
        source,
        description: DataDescription::Conll {
            train: absolute(train_path)?,
            dev: args.dev.as_deref().map(absolute).transpose()?,
            token_column: args.token_column,
            label_column: args.label_column,
        },
    })
}

/// The embedding table a checkpoint expects, optionally from another file,
/// which must have the checkpoint's width.
pub fn checkpoint_table(source: &EmbeddingSource, replacement: Option<&PathBuf>, dim: usize) -> Result<EmbeddingTable> {
    let table = match replacement {
        Some(p) => {
            let lowercase = matches!(source, EmbeddingSource::File { lowercase: true, .. });
            load_embeddings(p, lowercase).with_context(|| format!("loading embeddings {}", p.display()))?
        }
        None => source.load().context("reloading the checkpoint's embeddings")?,
    };
    if table.dim() != dim {
        bail!(
            "embedding width {} does not match the checkpoint's input width {dim}",
            table.dim()
        );
    }
    Ok(table)
}
