use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Corpus, DataError, LabelMap, Result, Sequence, Split};

/// Sentences of rows of whitespace-separated fields, with 1-based line numbers.
pub type Rows = Vec<Vec<(usize, Vec<String>)>>;

/// Which columns hold the token and the label. `label: None` selects the
/// last column of each row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Columns {
    pub token: usize,
    pub label: Option<usize>,
}

const DOCSTART: &str = "-DOCSTART-";

/// Splits CoNLL text into sentences. Blank lines end a sentence and lines
/// starting with `-DOCSTART-` are skipped. Every row must have the same
/// number of columns as the first one.
pub fn parse_rows(text: &str) -> Result<Rows> {
    let mut sentences = Vec::new();
    let mut current: Vec<(usize, Vec<String>)> = Vec::new();
    let mut width = None;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let trimmed = line.trim();
        if trimmed.starts_with(DOCSTART) {
            continue;
        }
        if trimmed.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let fields: Vec<String> = trimmed.split_whitespace().map(str::to_string).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(DataError::RaggedColumns {
                    line: line_no,
                    expected: w,
                    found: fields.len(),
                })
            }
            _ => {}
        }
        current.push((line_no, fields));
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

fn build(text: &str, columns: Columns, mut labels: LabelMap, frozen: bool, split: Split) -> Result<Corpus> {
    let rows = parse_rows(text)?;
    if rows.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut sequences = Vec::with_capacity(rows.len());
    for sentence in rows {
        let mut seq = Sequence {
            tokens: Vec::with_capacity(sentence.len()),
            labels: Vec::with_capacity(sentence.len()),
        };
        for (line, fields) in sentence {
            let label_col = columns.label.unwrap_or(fields.len() - 1);
            for col in [columns.token, label_col] {
                if col >= fields.len() {
                    return Err(DataError::MissingColumn {
                        line,
                        column: col,
                        found: fields.len(),
                    });
                }
            }
            let label = &fields[label_col];
            let index = if frozen {
                labels.get(label).ok_or_else(|| DataError::UnknownLabel {
                    line,
                    label: label.clone(),
                })?
            } else {
                labels.insert(label)
            };
            seq.tokens.push(fields[columns.token].clone());
            seq.labels.push(index);
        }
        sequences.push(seq);
    }
    Ok(Corpus {
        sequences,
        label_map: labels,
        split,
    })
}

/// Parses a training corpus; labels are indexed in first-seen order.
pub fn parse_conll(text: &str, columns: Columns) -> Result<Corpus> {
    build(text, columns, LabelMap::new(), false, Split::Train)
}

/// Parses a corpus against an existing label map; unseen labels are errors.
pub fn parse_conll_frozen(text: &str, columns: Columns, labels: &LabelMap, split: Split) -> Result<Corpus> {
    build(text, columns, labels.clone(), true, split)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_conll(path: impl AsRef<Path>, columns: Columns) -> Result<Corpus> {
    parse_conll(&read(path.as_ref())?, columns)
}

pub fn read_conll_frozen(path: impl AsRef<Path>, columns: Columns, labels: &LabelMap, split: Split) -> Result<Corpus> {
    parse_conll_frozen(&read(path.as_ref())?, columns, labels, split)
}

/// Writes `token label` rows with a blank line after every sentence.
pub fn write_conll<W: Write>(mut out: W, corpus: &Corpus) -> std::io::Result<()> {
    for k in 0..corpus.len() {
        for (token, label) in corpus.sequences[k].tokens.iter().zip(corpus.label_names(k)) {
            writeln!(out, "{token} {label}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes rows back as space-separated fields, one blank line per sentence.
pub fn write_rows<W: Write>(mut out: W, rows: &Rows) -> std::io::Result<()> {
    for sentence in rows {
        for (_, fields) in sentence {
            writeln!(out, "{}", fields.join(" "))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_sentence() {
        let c = parse_conll("Batman NOUN\nis VERB\n\n", Columns::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sequences[0].tokens, ["Batman", "is"]);
        assert_eq!(c.label_names(0), ["NOUN", "VERB"]);
    }

    #[test]
    fn docstart_and_repeated_blank_lines() {
        let text = "-DOCSTART- -X- O\n\nEU B-ORG\nrejects O\n\n\n\nPeter B-PER\n";
        let c = parse_conll(text, Columns::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.label_map.names(), ["B-ORG", "O", "B-PER"]);
    }

    #[test]
    fn only_blank_lines_is_empty() {
        assert!(matches!(parse_conll("\n\n  \n", Columns::default()), Err(DataError::EmptyCorpus)));
    }

    #[test]
    fn missing_label_column() {
        let cols = Columns { token: 0, label: Some(2) };
        assert!(matches!(parse_conll("a X\nb Y\n", cols), Err(DataError::MissingColumn { line: 1, .. })));
        assert!(matches!(
            parse_conll("a X\nb\n", Columns::default()),
            Err(DataError::RaggedColumns { line: 2, .. })
        ));
    }

    #[test]
    fn frozen_map_rejects_unseen_label() {
        let train = parse_conll("a X\nb Y\n", Columns::default()).unwrap();
        let dev = parse_conll_frozen("b Y\nc X\n", Columns::default(), &train.label_map, Split::Dev).unwrap();
        assert_eq!(dev.sequences[0].labels, [1, 0]);
        let err = parse_conll_frozen("c Z\n", Columns::default(), &train.label_map, Split::Dev).unwrap_err();
        assert!(matches!(err, DataError::UnknownLabel { line: 1, .. }));
    }

    #[test]
    fn chunking_columns() {
        let cols = Columns { token: 0, label: Some(2) };
        let c = parse_conll("He PRP B-NP\nreckons VBZ B-VP\n", cols).unwrap();
        assert_eq!(c.label_names(0), ["B-NP", "B-VP"]);
    }
}
