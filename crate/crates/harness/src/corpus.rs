//! Loading and saving the hint-annotated QA dataset.
//!
//! On-disk format is JSONL, one object per line:
//! `{"id", "question", "answer": {"text", "aliases": [...]}, "hints": [...]}`
//! UTF-8, unknown fields ignored, ids matched byte-exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub use convqa_core::corpus::{Corpus, GoldAnswer, Question};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate question id `{id}` at line {line}")]
    DuplicateId { line: usize, id: String },
}

/// Parse every record in the file, preserving input order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut questions = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut question: Question =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        question.trim_fields();
        question
            .validate()
            .map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        if !seen_ids.insert(question.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: question.id,
            });
        }
        questions.push(question);
    }
    Ok(Corpus {
        questions,
        source_path: path.display().to_string(),
    })
}

/// Write the corpus back out as JSONL, one record per line.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for q in &corpus.questions {
        let line = serde_json::to_string(q).expect("question serializes");
        writeln!(file, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Keep only questions with at least `min_hints` hints. Returns the
/// filtered corpus and the number of questions dropped.
pub fn filter_by_min_hints(corpus: &Corpus, min_hints: usize) -> (Corpus, usize) {
    let questions: Vec<Question> = corpus
        .questions
        .iter()
        .filter(|q| q.hints.len() >= min_hints)
        .cloned()
        .collect();
    let dropped = corpus.questions.len() - questions.len();
    (
        Corpus {
            questions,
            source_path: corpus.source_path.clone(),
        },
        dropped,
    )
}
