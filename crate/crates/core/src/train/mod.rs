//! Mini-batch training, evaluation and checkpoints.
//!
//! Each batch is a list of whole sequences; there is no padding. Every
//! sequence is run on its own tape, possibly in parallel, and the gradients
//! are summed in sequence order before one optimizer step, so a run is a
//! pure function of the model, the data and the [`TrainConfig`].

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, CheckpointMeta, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_step, clip_global_norm, sgd_step, AdamHyper, AdamState, Optimizer};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EmbeddingSource, LabelMap, SequenceBatch};
use crate::metrics::{self, MetricsError};
use crate::nn::{ArchitectureSpec, Graph, LabeledModel, NnError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}; parameter norms: {}", format_norms(.param_norms))]
    NonFinite {
        epoch: usize,
        batch: usize,
        param_norms: Vec<(String, f64)>,
    },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

fn format_norms(norms: &[(String, f64)]) -> String {
    norms.iter().map(|(n, v)| format!("{n}={v:.4e}")).collect::<Vec<_>>().join(", ")
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Accuracy,
    SpanF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate of the single layer of arch 1.
    pub lr_model: f64,
    /// One learning rate per layer for arch 2 and 3.
    pub lr_layers: Vec<f64>,
    pub optimizer: Optimizer,
    pub adam: AdamHyper,
    /// Seeds the batch shuffling.
    pub seed: u64,
    pub shuffle: bool,
    /// Joint gradient-norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
    /// Dev metric used to pick the returned checkpoint.
    pub metric: MetricKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            lr_model: 0.005,
            lr_layers: vec![0.05, 0.005],
            optimizer: Optimizer::Adam,
            adam: AdamHyper::default(),
            seed: 0,
            shuffle: true,
            clip: None,
            metric: MetricKind::Accuracy,
        }
    }
}

impl TrainConfig {
    /// Checks the configuration against `spec`. Learning rates may be zero,
    /// which freezes the corresponding layer.
    pub fn validate(&self, spec: &ArchitectureSpec) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if spec.arch > 1 && self.lr_layers.len() != spec.n_layers() {
            return bad(format!(
                "arch {} needs {} per-layer learning rates, got {}",
                spec.arch,
                spec.n_layers(),
                self.lr_layers.len()
            ));
        }
        if self.learning_rates(spec).iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return bad("learning rates must be finite and non-negative".into());
        }
        if let Some(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip norm must be positive".into());
            }
        }
        let h = self.adam;
        if !((0.0..1.0).contains(&h.beta1) && (0.0..1.0).contains(&h.beta2) && h.eps > 0.0) {
            return bad("Adam needs 0 <= beta < 1 and eps > 0".into());
        }
        Ok(())
    }

    /// Learning rate per parameter group of a model built from `spec`.
    pub fn learning_rates(&self, spec: &ArchitectureSpec) -> Vec<f64> {
        if spec.arch == 1 {
            vec![self.lr_model]
        } else {
            self.lr_layers.clone()
        }
    }
}

/// Training split, optional dev split and what is needed to reuse the model.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: SequenceBatch,
    pub dev: Option<SequenceBatch>,
    pub labels: LabelMap,
    pub embeddings: EmbeddingSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean token cross-entropy over the epoch's updates.
    pub mean_loss: f64,
    pub dev_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model of the best dev epoch (the last epoch without dev data).
    pub model: LabeledModel,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

struct SequenceResult {
    loss: f64,
    grads: Vec<Option<Vec<f64>>>,
}

fn sequence_gradient(model: &LabeledModel, inputs: &[Vec<f64>], labels: &[usize]) -> std::result::Result<SequenceResult, NnError> {
    let mut g = Graph::new(&model.store);
    let loss = model.loss(&mut g, inputs, labels)?;
    g.tape.backward(loss)?;
    Ok(SequenceResult {
        loss: g.tape.scalar_value(loss),
        grads: g.param_grads(),
    })
}

fn param_norms(model: &LabeledModel) -> Vec<(String, f64)> {
    model
        .store
        .ids()
        .map(|id| (model.store.name(id).to_string(), model.store.get(id).norm()))
        .collect()
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Trains `model` and returns the weights of the best dev epoch (ties keep
/// the earlier epoch) together with the per-epoch log.
pub fn train(model: LabeledModel, data: &TrainingData, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    mut model: LabeledModel,
    data: &TrainingData,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let spec = model.spec.clone();
    config.validate(&spec)?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if data.train.dim != spec.embedding_dim {
        return Err(NnError::InputWidth {
            expected: spec.embedding_dim,
            got: data.train.dim,
        }
        .into());
    }
    let lrs = config.learning_rates(&spec);
    let ids: Vec<_> = model.store.ids().collect();
    if let Some(&id) = ids.iter().find(|&&id| model.store.group(id) >= lrs.len()) {
        return Err(TrainError::InvalidConfig(format!(
            "parameter '{}' has no learning rate",
            model.store.name(id)
        )));
    }
    let mut adam: Vec<AdamState> = ids.iter().map(|&id| AdamState::new(model.store.get(id).numel())).collect();
    let mut rng = shuffle_rng(config.seed);
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(Checkpoint, LabeledModel, Option<f64>)> = None;

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut losses = vec![0.0; n];
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&k| sequence_gradient(&model, &data.train.inputs[k], &data.train.labels[k]))
                .collect();
            let non_finite = |model: &LabeledModel| TrainError::NonFinite {
                epoch,
                batch: b + 1,
                param_norms: param_norms(model),
            };
            let tokens: usize = batch.iter().map(|&k| data.train.labels[k].len()).sum();
            let mut grads: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; model.store.get(id).numel()]).collect();
            for (&k, r) in batch.iter().zip(results) {
                let r = match r {
                    Ok(r) => r,
                    Err(NnError::NonFinite { .. }) => return Err(non_finite(&model)),
                    Err(e) => return Err(e.into()),
                };
                losses[k] = r.loss;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    if let Some(g) = g {
                        acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
                    }
                }
            }
            let scale = 1.0 / tokens as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            if grads.iter().flatten().any(|g| !g.is_finite()) || batch.iter().any(|&k| !losses[k].is_finite()) {
                return Err(non_finite(&model));
            }
            if let Some(c) = config.clip {
                clip_global_norm(&mut grads, c);
            }
            for (slot, &id) in ids.iter().enumerate() {
                let lr = lrs[model.store.group(id)];
                let params = model.store.get_mut(id).data_mut();
                match config.optimizer {
                    Optimizer::Adam => adam_step(params, &grads[slot], &mut adam[slot], lr, config.adam)?,
                    Optimizer::Sgd => sgd_step(params, &grads[slot], lr)?,
                }
            }
            if ids.iter().any(|&id| model.store.get(id).data().iter().any(|v| !v.is_finite())) {
                return Err(non_finite(&model));
            }
        }
        let mean_loss = losses.iter().sum::<f64>() / data.train.n_tokens() as f64;
        let dev_score = match &data.dev {
            Some(dev) => match evaluate(&model, dev, config.metric, &data.labels) {
                Ok(s) => Some(s),
                Err(TrainError::Model(NnError::NonFinite { .. })) => {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: n.div_ceil(config.batch_size),
                        param_norms: param_norms(&model),
                    })
                }
                Err(e) => return Err(e),
            },
            None => None,
        };
        let record = EpochRecord {
            epoch,
            mean_loss,
            dev_score,
        };
        on_epoch(&record);
        log.push(record);
        let improved = match (&best, dev_score) {
            (None, _) => true,
            (Some((_, _, Some(prev))), Some(cur)) => cur > *prev,
            (Some(_), None) => true,
            (Some((_, _, None)), Some(_)) => true,
        };
        if improved {
            let meta = CheckpointMeta {
                spec: spec.clone(),
                config: config.clone(),
                epoch,
                dev_score,
                rng: RngState {
                    seed: config.seed,
                    stream: rng.get_stream(),
                    word_pos: rng.get_word_pos().to_string(),
                },
                labels: data.labels.clone(),
                embeddings: data.embeddings.clone(),
            };
            best = Some((Checkpoint::from_model(&model, meta), model.clone(), dev_score));
        }
    }

    let (checkpoint, best_model) = match best {
        Some((c, m, _)) => (c, m),
        None => {
            // zero epochs: the untouched model
            let meta = CheckpointMeta {
                spec: spec.clone(),
                config: config.clone(),
                epoch: 0,
                dev_score: None,
                rng: RngState {
                    seed: config.seed,
                    stream: rng.get_stream(),
                    word_pos: rng.get_word_pos().to_string(),
                },
                labels: data.labels.clone(),
                embeddings: data.embeddings.clone(),
            };
            (Checkpoint::from_model(&model, meta), model)
        }
    };
    Ok(TrainOutcome {
        model: best_model,
        checkpoint,
        log,
    })
}

/// Arg-max label sequences for every sequence of `inputs`.
pub fn predict_all(model: &LabeledModel, inputs: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<usize>>> {
    inputs
        .par_iter()
        .map(|x| model.predict(x).map_err(TrainError::from))
        .collect()
}

/// Scores arg-max predictions against the gold labels of `data`.
pub fn evaluate(model: &LabeledModel, data: &SequenceBatch, metric: MetricKind, labels: &LabelMap) -> Result<f64> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let pred = predict_all(model, &data.inputs)?;
    score(&pred, &data.labels, metric, labels)
}

/// Scores label-index sequences with `metric`.
pub fn score(pred: &[Vec<usize>], gold: &[Vec<usize>], metric: MetricKind, labels: &LabelMap) -> Result<f64> {
    match metric {
        MetricKind::Accuracy => Ok(metrics::corpus_accuracy(pred, gold)?),
        MetricKind::SpanF1 => {
            let names = |seqs: &[Vec<usize>]| -> Vec<Vec<String>> {
                seqs.iter()
                    .map(|s| s.iter().map(|&l| labels.name(l).unwrap_or("?").to_string()).collect())
                    .collect()
            };
            Ok(metrics::span_f1(&names(pred), &names(gold))?.f1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, EmbeddingTable, Split, SynthKind};
    use crate::nn::{build_model, ModelKind};

    fn toy_data(kind: SynthKind, n_train: usize, seed: u64) -> TrainingData {
        let (train, table) = synth_corpus(kind, seed, n_train, Split::Train);
        let (dev, _) = synth_corpus(kind, seed, 20, Split::Dev);
        TrainingData {
            train: SequenceBatch::embed(&train, &table),
            dev: Some(SequenceBatch::embed(&dev, &table)),
            labels: train.label_map.clone(),
            embeddings: EmbeddingSource::OneHot {
                vocab: table.words().to_vec(),
                lowercase: false,
            },
        }
    }

    #[test]
    fn memorises_one_sequence() {
        let table = EmbeddingTable::one_hot(&["a", "b", "c"]);
        let tokens = ["a", "c", "b", "b", "a"];
        let labels = LabelMap::from(vec!["X".to_string(), "Y".to_string(), "Z".to_string()]);
        let batch = SequenceBatch {
            inputs: vec![table.embed(&tokens)],
            labels: vec![vec![0, 2, 1, 1, 0]],
            tokens: vec![tokens.iter().map(|s| s.to_string()).collect()],
            dim: 3,
        };
        let data = TrainingData {
            train: batch.clone(),
            dev: None,
            labels: labels.clone(),
            embeddings: EmbeddingSource::OneHot { vocab: table.words().to_vec(), lowercase: false },
        };
        let spec = ArchitectureSpec::new(ModelKind::Hnmc, 1, 0, 3, 3);
        let config = TrainConfig {
            epochs: 200,
            lr_model: 0.05,
            ..TrainConfig::default()
        };
        let out = train(build_model(&spec, 0).unwrap(), &data, &config).unwrap();
        assert_eq!(evaluate(&out.model, &batch, MetricKind::Accuracy, &labels).unwrap(), 1.0);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_and_weights() {
        let data = toy_data(SynthKind::HmmSampled, 40, 1);
        let spec = ArchitectureSpec::new(ModelKind::HnmcCn, 1, 0, 4, 8);
        let model = build_model(&spec, 2).unwrap();
        let config = TrainConfig {
            epochs: 3,
            lr_model: 0.0,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, &config).unwrap();
        assert!(out.log.windows(2).all(|w| w[0].mean_loss == w[1].mean_loss));
        assert_eq!(out.model.store, model.store);
    }

    #[test]
    fn freezing_one_group() {
        let data = toy_data(SynthKind::HmmSampled, 30, 2);
        let spec = ArchitectureSpec::new(ModelKind::Hnmc, 2, 5, 4, 8);
        let model = build_model(&spec, 0).unwrap();
        let config = TrainConfig {
            epochs: 2,
            lr_layers: vec![0.0, 0.01],
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, &config).unwrap();
        for id in model.store.ids() {
            let same = model.store.get(id).data() == out.model.store.get(id).data();
            assert_eq!(same, model.store.group(id) == 0, "{}", model.store.name(id));
        }
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let data = toy_data(SynthKind::Lookahead, 50, 3);
        let spec = ArchitectureSpec::new(ModelKind::BiRnn, 3, 4, 4, 6);
        let config = TrainConfig {
            epochs: 3,
            lr_layers: vec![0.05, 0.005],
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(build_model(&spec, 1).unwrap(), &data, &config).unwrap();
        let b = train(build_model(&spec, 1).unwrap(), &data, &config).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = toy_data(SynthKind::HmmSampled, 20, 4);
        let spec = ArchitectureSpec::new(ModelKind::Hnmc2, 1, 0, 4, 8);
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let out = train(build_model(&spec, 0).unwrap(), &data, &config).unwrap();
        let bytes = out.checkpoint.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, out.checkpoint);
        let model = back.model().unwrap();
        let x = &data.train.inputs[0];
        assert_eq!(model.probabilities(x).unwrap(), out.model.probabilities(x).unwrap());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }

    #[test]
    fn config_validation() {
        let spec = ArchitectureSpec::new(ModelKind::Rnn, 2, 4, 3, 3);
        let one = TrainConfig {
            lr_layers: vec![0.01],
            ..TrainConfig::default()
        };
        assert!(matches!(one.validate(&spec), Err(TrainError::InvalidConfig(_))));
        let zero_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(zero_batch.validate(&spec).is_err());
        assert!(TrainConfig::default().validate(&spec).is_ok());
    }

    #[test]
    fn constant_predictions_on_balanced_labels() {
        let labels = LabelMap::from(vec!["a".to_string(), "b".to_string(), "c".to_string(), "d".to_string()]);
        let gold = vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0]];
        let pred = vec![vec![1; 4], vec![1; 4]];
        assert_eq!(score(&pred, &gold, MetricKind::Accuracy, &labels).unwrap(), 0.25);
        assert_eq!(score(&gold, &gold, MetricKind::Accuracy, &labels).unwrap(), 1.0);
    }
}
