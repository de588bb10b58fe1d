//! End-to-end training properties on the synthetic corpora.

mod common;

use common::{synth_data, train_arch1};
use hnmc::data::SynthKind;
use hnmc::nn::ModelKind;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[test]
fn loss_decreases_over_the_first_five_epochs() {
    for corpus in [SynthKind::HmmSampled, SynthKind::Lookahead] {
        let data = synth_data(corpus, 7, 500, 100);
        for kind in ModelKind::ALL {
            let losses: Vec<(f64, f64)> = SEEDS
                .iter()
                .map(|&seed| {
                    let out = train_arch1(kind, &data, seed, 0.005, 5);
                    (out.log[0].mean_loss, out.log[4].mean_loss)
                })
                .collect();
            let improved = losses.iter().filter(|(first, fifth)| fifth < first).count();
            assert!(improved >= 4, "{corpus} {kind}: {losses:?}");
        }
    }
}

#[test]
fn same_seed_gives_the_same_log() {
    let data = synth_data(SynthKind::Lookahead, 2, 60, 20);
    let a = train_arch1(ModelKind::HnmcCn, &data, 9, 0.01, 3);
    let b = train_arch1(ModelKind::HnmcCn, &data, 9, 0.01, 3);
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
}
