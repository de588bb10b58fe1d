//! Corpora, label maps, embedding tables and synthetic data.
//!
//! A [`Corpus`] holds token sequences with label indices into a
//! [`LabelMap`]; an [`EmbeddingTable`] turns tokens into vectors and a
//! [`SequenceBatch`] is a corpus with its embeddings resolved, ready for
//! training or evaluation.

mod conll;
mod embeddings;
mod synth;

pub use conll::{parse_conll, parse_conll_frozen, parse_rows, read_conll, read_conll_frozen, write_conll, write_rows, Columns, Rows};
pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingSource, EmbeddingTable};
pub use synth::{hmm_sampled_params, synth_corpus, SynthKind, HMM_SAMPLED_NOISE};

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedColumns { line: usize, expected: usize, found: usize },
    #[error("line {line}: column {column} is missing (the row has {found} columns)")]
    MissingColumn { line: usize, column: usize, found: usize },
    #[error("corpus contains no sentences")]
    EmptyCorpus,
    #[error("line {line}: label '{label}' was not seen in the training data")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: embedding has {found} components, expected {expected}")]
    EmbeddingDim { line: usize, expected: usize, found: usize },
    #[error("line {line}: cannot parse '{value}' as a number")]
    BadNumber { line: usize, value: String },
    #[error("embedding file has no vectors")]
    EmptyEmbeddings,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bijection between label strings and indices `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `label`, appending it if new.
    pub fn insert(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl From<Vec<String>> for LabelMap {
    fn from(names: Vec<String>) -> Self {
        let mut map = LabelMap::new();
        for n in &names {
            map.insert(n);
        }
        map
    }
}

impl From<LabelMap> for Vec<String> {
    fn from(map: LabelMap) -> Self {
        map.names
    }
}

/// One labelled sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<Sequence>,
    pub label_map: LabelMap,
    pub split: Split,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.sequences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Label strings of sequence `k`.
    pub fn label_names(&self, k: usize) -> Vec<&str> {
        self.sequences[k]
            .labels
            .iter()
            .map(|&l| self.label_map.name(l).expect("label index within map"))
            .collect()
    }
}

/// A corpus with every token replaced by its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<Vec<usize>>,
    pub tokens: Vec<Vec<String>>,
    pub dim: usize,
}

impl SequenceBatch {
    pub fn embed(corpus: &Corpus, table: &EmbeddingTable) -> Self {
        SequenceBatch {
            inputs: corpus.sequences.iter().map(|s| table.embed(&s.tokens)).collect(),
            labels: corpus.sequences.iter().map(|s| s.labels.clone()).collect(),
            tokens: corpus.sequences.iter().map(|s| s.tokens.clone()).collect(),
            dim: table.dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }
}
