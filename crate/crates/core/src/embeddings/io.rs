//! Parsers for text embedding files.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use super::{EmbeddingError, EmbeddingFormat, EmbeddingStore};

/// Reads an embedding file from `path`. See [`load_store`].
pub fn load_store_path(
    path: &Path,
    format: EmbeddingFormat,
    vocab_filter: Option<&HashSet<String>>,
) -> Result<EmbeddingStore, EmbeddingError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    load_store(reader, format, vocab_filter)
}

/// Parses embeddings from a reader.
///
/// Records are `token SP v1 SP ... SP vm`, UTF-8, LF or CRLF; the word2vec
/// variant carries a leading `|V| SP m` header which is consumed and checked
/// against the actual record count. When `vocab_filter` is given, only its
/// members are kept (the header check still counts every record). Duplicate
/// tokens keep their first occurrence with a warning; all values are parsed
/// as finite 64-bit reals.
pub fn load_store(
    reader: impl BufRead,
    format: EmbeddingFormat,
    vocab_filter: Option<&HashSet<String>>,
) -> Result<EmbeddingStore, EmbeddingError> {
    let mut lines = reader.lines().enumerate();

    let mut declared: Option<(usize, usize)> = None;
    if format == EmbeddingFormat::Word2vecText {
        let (idx, line) = lines.next().ok_or_else(|| EmbeddingError::MalformedLine {
            line: 1,
            reason: "missing word2vec header".into(),
        })?;
        let line = line?;
        declared = Some(parse_header(idx + 1, line.trim_end_matches('\r'))?);
    }

    let mut dim: Option<usize> = declared.map(|(_, m)| m);
    let mut words: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut data: Vec<f64> = Vec::new();
    let mut records = 0usize;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().ok_or_else(|| EmbeddingError::MalformedLine {
            line: line_no,
            reason: "empty record".into(),
        })?;
        let mut values = Vec::with_capacity(dim.unwrap_or(0));
        for field in fields {
            let v: f64 = field.parse().map_err(|e| EmbeddingError::MalformedLine {
                line: line_no,
                reason: format!("bad value {field:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(EmbeddingError::MalformedLine {
                    line: line_no,
                    reason: format!("non-finite value {field:?}"),
                });
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(EmbeddingError::MalformedLine {
                line: line_no,
                reason: "record has a token but no values".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(m) if m != values.len() => {
                return Err(EmbeddingError::InconsistentDimension {
                    line: line_no,
                    expected: m,
                    got: values.len(),
                });
            }
            Some(_) => {}
        }
        records += 1;

        if let Some(filter) = vocab_filter {
            if !filter.contains(token) {
                continue;
            }
        }
        if let Some(&first) = seen.get(token) {
            log::warn!(
                "line {line_no}: duplicate token {token:?}, keeping first occurrence (id {first})"
            );
            continue;
        }
        seen.insert(token.to_string(), words.len());
        words.push(token.to_string());
        data.extend_from_slice(&values);
    }

    if let Some((declared_count, _)) = declared {
        if declared_count != records {
            return Err(EmbeddingError::HeaderMismatch {
                declared: declared_count,
                got: records,
            });
        }
    }
    if words.len() < 2 {
        return Err(EmbeddingError::TooFewWords { count: words.len() });
    }
    EmbeddingStore::new(words, data, dim.expect("set by first record"))
}

fn parse_header(line_no: usize, line: &str) -> Result<(usize, usize), EmbeddingError> {
    let mut fields = line.split_whitespace();
    let parse = |field: Option<&str>| -> Result<usize, EmbeddingError> {
        field
            .ok_or_else(|| EmbeddingError::MalformedLine {
                line: line_no,
                reason: "header needs `|V| m`".into(),
            })?
            .parse()
            .map_err(|e| EmbeddingError::MalformedLine {
                line: line_no,
                reason: format!("bad header field: {e}"),
            })
    };
    let count = parse(fields.next())?;
    let dim = parse(fields.next())?;
    if fields.next().is_some() {
        return Err(EmbeddingError::MalformedLine {
            line: line_no,
            reason: "header has trailing fields".into(),
        });
    }
    Ok((count, dim))
}
