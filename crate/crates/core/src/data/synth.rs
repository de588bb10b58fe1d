use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, EmbeddingTable, LabelMap, Sequence, Split};
use crate::prob::dirichlet_row;
use crate::prob::{ChainKind, GenerativeHmmParams};

/// Emission mass an `hmm_sampled` state spreads over tokens it does not own.
pub const HMM_SAMPLED_NOISE: f64 = 0.02;

const HMM_STATES: usize = 4;
const TOKENS_PER_STATE: usize = 2;
const LOOKAHEAD_CLASSES: usize = 3;
const TOKENS_PER_CLASS: usize = 2;
const MIN_LEN: usize = 4;
const MAX_LEN: usize = 10;

/// Synthetic labelling tasks with one-hot token embeddings.
///
/// * `hmm_sampled`: paths of a sticky 4-state HMM in which each state owns
///   two tokens and emits any other token with total probability 0.02; the
///   label is the hidden state.
/// * `lookahead`: uniform i.i.d. tokens from three classes of two tokens;
///   the label of position `t` is the class of token `t + 1`, and `END` at
///   the last position. Nothing to the left of `t + 1` carries information
///   about label `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    HmmSampled,
    Lookahead,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::HmmSampled => "hmm_sampled",
            SynthKind::Lookahead => "lookahead",
        }
    }

    fn vocabulary(self) -> Vec<String> {
        match self {
            SynthKind::HmmSampled => (0..HMM_STATES * TOKENS_PER_STATE).map(|k| format!("w{k}")).collect(),
            SynthKind::Lookahead => (0..LOOKAHEAD_CLASSES * TOKENS_PER_CLASS)
                .map(|k| format!("c{}t{}", k / TOKENS_PER_CLASS, k % TOKENS_PER_CLASS))
                .collect(),
        }
    }

    fn labels(self) -> LabelMap {
        let names: Vec<String> = match self {
            SynthKind::HmmSampled => (0..HMM_STATES).map(|i| format!("S{i}")).collect(),
            SynthKind::Lookahead => (0..LOOKAHEAD_CLASSES)
                .map(|c| format!("C{c}"))
                .chain(std::iter::once("END".to_string()))
                .collect(),
        };
        LabelMap::from(names)
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        [SynthKind::HmmSampled, SynthKind::Lookahead]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DataError::Invalid(format!("unknown synthetic corpus '{s}' (expected hmm_sampled or lookahead)")))
    }
}

/// The generating HMM of `hmm_sampled` for `seed`: transitions put 0.5 on
/// staying plus half of a random Dirichlet(1) row, and state `i` emits
/// tokens `2i` and `2i + 1`.
pub fn hmm_sampled_params(seed: u64) -> GenerativeHmmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = HMM_STATES;
    let m = n * TOKENS_PER_STATE;
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        let row = dirichlet_row(&mut rng, n);
        for j in 0..n {
            a[[i, j]] = 0.5 * row[j] + if i == j { 0.5 } else { 0.0 };
        }
    }
    let own = (1.0 - HMM_SAMPLED_NOISE) / TOKENS_PER_STATE as f64;
    let other = HMM_SAMPLED_NOISE / (m - TOKENS_PER_STATE) as f64;
    let b = Array2::from_shape_fn((n, m), |(i, y)| if y / TOKENS_PER_STATE == i { own } else { other });
    GenerativeHmmParams::stationary_hmm(a, b)
}

fn split_stream(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Dev => 2,
        Split::Test => 3,
    }
}

/// `size` sequences of length 4 to 10 for `split`.
///
/// The generator depends on `seed` only, so the three splits share it; each
/// split samples from its own stream of the seeded ChaCha generator.
pub fn synth_corpus(kind: SynthKind, seed: u64, size: usize, split: Split) -> (Corpus, EmbeddingTable) {
    let vocab = kind.vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split_stream(split));
    let hmm = (kind == SynthKind::HmmSampled).then(|| hmm_sampled_params(seed));

    let mut sequences = Vec::with_capacity(size);
    for _ in 0..size {
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let (tokens, labels) = match &hmm {
            Some(p) => p.sample(ChainKind::Hmm, len, &mut rng).map(|(x, y)| (y, x)).expect("valid generator"),
            None => {
                let toks: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab.len())).collect();
                let labels = (0..len)
                    .map(|t| if t + 1 < len { toks[t + 1] / TOKENS_PER_CLASS } else { LOOKAHEAD_CLASSES })
                    .collect();
                (toks, labels)
            }
        };
        sequences.push(Sequence {
            tokens: tokens.into_iter().map(|y| vocab[y].clone()).collect(),
            labels,
        });
    }
    let corpus = Corpus {
        sequences,
        label_map: kind.labels(),
        split,
    };
    (corpus, EmbeddingTable::one_hot(&vocab))
}
