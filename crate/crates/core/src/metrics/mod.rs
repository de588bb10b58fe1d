//! Token accuracy and BIO span F1.
//!
//! Spans follow the usual CoNLL reading of BIO tags: `B-t` opens a span of
//! type `t`, `I-t` continues an open span of type `t`, and `O` closes any open
//! span. An `I-t` that does not continue a span of type `t` opens a new one,
//! as the common CoNLL evaluation script does.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction has {pred} items but gold has {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("nothing to score")]
    Empty,
    #[error("tag '{0}' is not O, B-<type> or I-<type>")]
    UnknownTag(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_lengths(pred: usize, gold: usize) -> Result<()> {
    if pred == gold {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch { pred, gold })
    }
}

/// Fraction of positions where `pred` equals `gold`.
pub fn token_accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Token accuracy pooled over all positions of all sequences.
pub fn corpus_accuracy<T: PartialEq>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        check_lengths(p.len(), g.len())?;
        hits += p.iter().zip(g).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(hits as f64 / total as f64)
}

/// A labelled chunk covering positions `start..=end` of sequence `sequence`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub sequence: usize,
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpanSet {
    pub spans: BTreeSet<Span>,
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Result<Tag<'_>> {
    if tag == "O" {
        return Ok(Tag::Outside);
    }
    let bad = || MetricsError::UnknownTag(tag.to_string());
    let (prefix, kind) = tag.split_once('-').ok_or_else(bad)?;
    if kind.is_empty() {
        return Err(bad());
    }
    match prefix {
        "B" => Ok(Tag::Begin(kind)),
        "I" => Ok(Tag::Inside(kind)),
        _ => Err(bad()),
    }
}

impl SpanSet {
    /// Extracts the spans of every BIO-tagged sequence.
    pub fn extract<S: AsRef<str>>(sequences: &[Vec<S>]) -> Result<Self> {
        let mut spans = BTreeSet::new();
        for (k, tags) in sequences.iter().enumerate() {
            let mut open: Option<(usize, &str)> = None;
            for (t, tag) in tags.iter().enumerate() {
                let parsed = parse_tag(tag.as_ref())?;
                let continues = matches!((&parsed, open), (Tag::Inside(kind), Some((_, cur))) if *kind == cur);
                if continues {
                    continue;
                }
                if let Some((start, kind)) = open.take() {
                    spans.insert(Span { sequence: k, start, end: t - 1, kind: kind.to_string() });
                }
                open = match parsed {
                    Tag::Outside => None,
                    Tag::Begin(kind) | Tag::Inside(kind) => Some((t, kind)),
                };
            }
            if let Some((start, kind)) = open {
                spans.insert(Span { sequence: k, start, end: tags.len() - 1, kind: kind.to_string() });
            }
        }
        Ok(SpanSet { spans })
    }

    /// Canonical BIO tags for sequences of the given lengths: `B-t` at each
    /// span start, `I-t` inside, `O` elsewhere.
    pub fn to_tags(&self, lengths: &[usize]) -> Vec<Vec<String>> {
        let mut tags: Vec<Vec<String>> = lengths.iter().map(|&n| vec!["O".to_string(); n]).collect();
        for s in &self.spans {
            tags[s.sequence][s.start] = format!("B-{}", s.kind);
            for tag in &mut tags[s.sequence][s.start + 1..=s.end] {
                *tag = format!("I-{}", s.kind);
            }
        }
        tags
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact-match span precision, recall and F1.
///
/// Precision is 0 when nothing is predicted and recall is 0 when there is
/// nothing to find; F1 is 1 when both sides have no spans at all.
pub fn span_f1<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>]) -> Result<SpanScores> {
    check_lengths(pred.len(), gold.len())?;
    for (p, g) in pred.iter().zip(gold) {
        check_lengths(p.len(), g.len())?;
    }
    let (p, g) = (SpanSet::extract(pred)?, SpanSet::extract(gold)?);
    if p.is_empty() && g.is_empty() {
        return Ok(SpanScores { precision: 0.0, recall: 0.0, f1: 1.0 });
    }
    let hits = p.spans.intersection(&g.spans).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { hits / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { hits / g.len() as f64 };
    let f1 = if hits == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(SpanScores { precision, recall, f1 })
}
