use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Word vectors of a fixed width with a zero vector for unknown words.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    unk: Vec<f64>,
    lowercase: bool,
}

impl EmbeddingTable {
    /// An empty table of width `dim`; every lookup returns the zero vector.
    pub fn new(dim: usize, lowercase: bool) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            unk: vec![0.0; dim],
            lowercase,
        }
    }

    /// One-hot vectors over `vocab`, in order.
    pub fn one_hot<S: AsRef<str>>(vocab: &[S]) -> Self {
        Self::one_hot_with(vocab, false)
    }

    /// One-hot vectors over `vocab`; with `lowercase`, lookups ignore case
    /// and words equal after lowercasing share the first one's vector.
    pub fn one_hot_with<S: AsRef<str>>(vocab: &[S], lowercase: bool) -> Self {
        let mut table = EmbeddingTable::new(vocab.len(), lowercase);
        for (k, w) in vocab.iter().enumerate() {
            let mut v = vec![0.0; vocab.len()];
            v[k] = 1.0;
            table.insert(w.as_ref(), &v);
        }
        table
    }

    fn key(&self, word: &str) -> String {
        if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }

    /// Adds `word` unless it is already present; returns whether it was added.
    ///
    /// # Panics
    /// If `vector` does not have the table's width.
    pub fn insert(&mut self, word: &str, vector: &[f64]) -> bool {
        assert_eq!(vector.len(), self.dim, "embedding width");
        let key = self.key(word);
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key.clone(), self.words.len());
        self.words.push(key);
        self.vectors.extend_from_slice(vector);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Stored words in insertion order (already lowercased if the flag is set).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&self.key(word))
    }

    /// The vector of `word`, or the zero vector if it is unknown.
    pub fn lookup(&self, word: &str) -> &[f64] {
        match self.index.get(&self.key(word)) {
            Some(&k) => &self.vectors[k * self.dim..(k + 1) * self.dim],
            None => &self.unk,
        }
    }

    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Vec<f64>> {
        tokens.iter().map(|t| self.lookup(t.as_ref()).to_vec()).collect()
    }
}

fn is_header(fields: &[&str]) -> bool {
    fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok())
}

/// Parses `word v1 ... vD` lines. An optional first line `count dim` is
/// skipped, blank lines are ignored and the first occurrence of a repeated
/// word wins.
pub fn parse_embeddings(text: &str, lowercase: bool) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || (table.is_none() && k == 0 && is_header(&fields)) {
            continue;
        }
        let found = fields.len() - 1;
        let t = table.get_or_insert_with(|| EmbeddingTable::new(found, lowercase));
        if found != t.dim() || found == 0 {
            return Err(DataError::EmbeddingDim {
                line: line_no,
                expected: t.dim(),
                found,
            });
        }
        values.clear();
        for v in &fields[1..] {
            values.push(v.parse::<f64>().map_err(|_| DataError::BadNumber {
                line: line_no,
                value: v.to_string(),
            })?);
        }
        t.insert(fields[0], &values);
    }
    table.ok_or(DataError::EmptyEmbeddings)
}

pub fn load_embeddings(path: impl AsRef<Path>, lowercase: bool) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(&text, lowercase)
}

/// Where a model's input vectors come from, recorded so that a saved model
/// can embed new text the same way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// One-hot vectors over `vocab`, in order.
    OneHot {
        vocab: Vec<String>,
        #[serde(default)]
        lowercase: bool,
    },
    /// A text embedding file, reloaded on use.
    File { path: PathBuf, dim: usize, lowercase: bool },
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::OneHot { vocab, .. } => vocab.len(),
            EmbeddingSource::File { dim, .. } => *dim,
        }
    }

    /// Rebuilds the table; a file whose width changed is an error.
    pub fn load(&self) -> Result<EmbeddingTable> {
        match self {
            EmbeddingSource::OneHot { vocab, lowercase } => Ok(EmbeddingTable::one_hot_with(vocab, *lowercase)),
            EmbeddingSource::File { path, dim, lowercase } => {
                let table = load_embeddings(path, *lowercase)?;
                if table.dim() != *dim {
                    return Err(DataError::EmbeddingDim {
                        line: 1,
                        expected: *dim,
                        found: table.dim(),
                    });
                }
                Ok(table)
            }
        }
    }
}
