#![allow(dead_code)]

use hnmc::data::{synth_corpus, EmbeddingSource, SequenceBatch, Split, SynthKind};
use hnmc::nn::{build_model, ArchitectureSpec, ModelKind};
use hnmc::train::{train, TrainConfig, TrainOutcome, TrainingData};

pub const TRAIN_SIZE: usize = 500;
pub const DEV_SIZE: usize = 200;

/// Train and dev splits of a synthetic corpus drawn from `data_seed`.
pub fn synth_data(kind: SynthKind, data_seed: u64, train_size: usize, dev_size: usize) -> TrainingData {
    let (train, table) = synth_corpus(kind, data_seed, train_size, Split::Train);
    let (dev, _) = synth_corpus(kind, data_seed, dev_size, Split::Dev);
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

/// Trains an arch-1 model of `kind` with Adam at learning rate `lr`.
pub fn train_arch1(kind: ModelKind, data: &TrainingData, seed: u64, lr: f64, epochs: usize) -> TrainOutcome {
    let spec = ArchitectureSpec::new(kind, 1, 32, data.labels.len(), data.train.dim);
    let model = build_model(&spec, seed).expect("valid architecture");
    let config = TrainConfig {
        epochs,
        lr_model: lr,
        seed,
        ..TrainConfig::default()
    };
    train(model, data, &config).expect("training succeeds")
}
