//! Properties of the corpus readers, embeddings, synthetic generators and
//! scoring functions.

use std::collections::BTreeSet;

use hnmc::data::{
    parse_conll, synth_corpus, write_conll, Columns, Corpus, EmbeddingTable, LabelMap, Sequence, Split, SynthKind,
    hmm_sampled_params,
};
use hnmc::metrics::{span_f1, Span, SpanSet};
use proptest::prelude::*;

fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9.,'()$%-]{1,8}".prop_filter("not a document marker", |t| !t.starts_with("-DOCSTART-"))
}

fn corpus() -> impl Strategy<Value = Corpus> {
    let labels = ["O", "B-PER", "I-PER", "B-LOC"];
    prop::collection::vec(prop::collection::vec((token(), 0usize..4), 1..8), 1..6).prop_map(move |sents| {
        let mut label_map = LabelMap::new();
        let sequences = sents
            .into_iter()
            .map(|rows| Sequence {
                tokens: rows.iter().map(|(t, _)| t.clone()).collect(),
                labels: rows.iter().map(|(_, l)| label_map.insert(labels[*l])).collect(),
            })
            .collect();
        Corpus {
            sequences,
            label_map,
            split: Split::Train,
        }
    })
}

fn bio_sequences() -> impl Strategy<Value = Vec<Vec<String>>> {
    let tag = prop::sample::select(vec!["O", "B-A", "I-A", "B-B", "I-B"]).prop_map(String::from);
    prop::collection::vec(prop::collection::vec(tag, 0..10), 1..5)
}

fn spans(tags: &[Vec<String>]) -> BTreeSet<Span> {
    SpanSet::extract(tags).unwrap().spans
}

proptest! {
    #[test]
    fn conll_write_then_read_is_identity(c in corpus()) {
        let mut buf = Vec::new();
        write_conll(&mut buf, &c).unwrap();
        let back = parse_conll(std::str::from_utf8(&buf).unwrap(), Columns::default()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn embedding_lookup_is_total(vocab in prop::collection::vec("[a-z]{1,5}", 1..10), probe in "[A-Za-z]{0,6}") {
        let table = EmbeddingTable::one_hot(&vocab);
        let v = table.lookup(&probe);
        prop_assert_eq!(v.len(), table.dim());
        if table.contains(&probe) {
            prop_assert_eq!(v.iter().sum::<f64>(), 1.0);
        } else {
            prop_assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn span_f1_is_symmetric_and_bounded(a in bio_sequences(), b in bio_sequences()) {
        let n = a.len().min(b.len());
        let b: Vec<Vec<String>> = a[..n].iter().zip(&b).map(|(x, y)| {
            (0..x.len()).map(|t| y.get(t).cloned().unwrap_or_else(|| "O".into())).collect()
        }).collect();
        let a = &a[..n];
        let ab = span_f1(a, &b).unwrap();
        let ba = span_f1(&b, a).unwrap();
        prop_assert_eq!(ab.f1, ba.f1);
        prop_assert!((0.0..=1.0).contains(&ab.f1));
        prop_assert_eq!(ab.f1 == 1.0, spans(a) == spans(&b));
    }

    #[test]
    fn extraction_after_reconstruction_is_idempotent(a in bio_sequences()) {
        let set = SpanSet::extract(&a).unwrap();
        let lengths: Vec<usize> = a.iter().map(Vec::len).collect();
        let canonical = set.to_tags(&lengths);
        prop_assert_eq!(&SpanSet::extract(&canonical).unwrap(), &set);
        prop_assert_eq!(set.to_tags(&lengths), SpanSet::extract(&canonical).unwrap().to_tags(&lengths));
    }
}

#[test]
fn hmm_sampled_transition_frequencies_converge() {
    let seed = 11;
    let (corpus, _) = synth_corpus(SynthKind::HmmSampled, seed, 10_000, Split::Train);
    let a = hmm_sampled_params(seed).a;
    let n = a.nrows();
    let mut counts = vec![vec![0usize; n]; n];
    for s in &corpus.sequences {
        for w in s.labels.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
    }
    for i in 0..n {
        let total: usize = counts[i].iter().sum();
        for j in 0..n {
            let freq = counts[i][j] as f64 / total as f64;
            assert!((freq - a[[i, j]]).abs() < 0.05, "a[{i},{j}] = {} but observed {freq}", a[[i, j]]);
        }
    }
}

#[test]
fn lookahead_labels_name_the_next_class() {
    let (corpus, _) = synth_corpus(SynthKind::Lookahead, 3, 200, Split::Dev);
    for s in &corpus.sequences {
        let names = corpus.label_map.names();
        for t in 0..s.tokens.len() {
            let label = &names[s.labels[t]];
            match s.tokens.get(t + 1) {
                Some(next) => assert_eq!(label.as_str(), format!("C{}", &next[1..2])),
                None => assert_eq!(label, "END"),
            }
        }
    }
}

#[test]
fn splits_differ_but_are_reproducible() {
    let (a, _) = synth_corpus(SynthKind::HmmSampled, 5, 50, Split::Train);
    let (b, _) = synth_corpus(SynthKind::HmmSampled, 5, 50, Split::Train);
    let (c, _) = synth_corpus(SynthKind::HmmSampled, 5, 50, Split::Dev);
    assert_eq!(a.sequences, b.sequences);
    assert_ne!(a.sequences, c.sequences);
}
