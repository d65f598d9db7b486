//! Question-to-hint cosine similarities over a gateway embedding provider,
//! with a resumable per-question ledger.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use convqa_core::corpus::{Corpus, Question};
use convqa_core::similarity::{cosine, EmbeddingVector, SimilarityError};

use crate::gateway::{Gateway, GatewayError};
use crate::ledger::{read_ledger, LedgerError, LedgerWriter};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// One similarity ledger line: the question's hint cosines in hint order,
/// or an error row retried on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimilarityRow {
    Scores {
        question_id: String,
        model: String,
        similarities: Vec<f64>,
    },
    Error {
        question_id: String,
        error: String,
    },
}

/// Embed the question text and each hint (one batched call, cached per
/// text) and return `cosine(question, hint_i)` in hint order.
pub fn question_sentence_similarities(
    gateway: &Gateway,
    model: &str,
    question: &Question,
) -> Result<Vec<f64>, SimError> {
    let mut texts: Vec<String> = Vec::with_capacity(question.hints.len() + 1);
    texts.push(question.text.clone());
    texts.extend(question.hints.iter().cloned());
    let vectors = gateway.embed(model, &texts)?;
    let question_vec = EmbeddingVector::new(vectors[0].clone(), model)?;
    vectors[1..]
        .iter()
        .map(|v| {
            let hint_vec = EmbeddingVector::new(v.clone(), model)?;
            Ok(cosine(&question_vec, &hint_vec)?)
        })
        .collect()
}

/// Per-question similarity vectors recovered from a ledger file. Questions
/// whose stored vector does not cover every hint are left out.
pub fn sims_from_ledger(
    path: impl AsRef<Path>,
    corpus: &Corpus,
) -> Result<BTreeMap<String, Vec<f64>>, LedgerError> {
    let rows: Vec<SimilarityRow> = read_ledger(path)?;
    let mut stored: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in rows {
        if let SimilarityRow::Scores {
            question_id,
            similarities,
            ..
        } = row
        {
            stored.insert(question_id, similarities);
        }
    }
    let mut out = BTreeMap::new();
    for q in &corpus.questions {
        if let Some(sims) = stored.get(&q.id) {
            if sims.len() == q.hints.len() {
                out.insert(q.id.clone(), sims.clone());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct SimilarityOutcome {
    pub by_question: BTreeMap<String, Vec<f64>>,
    pub skipped: usize,
    pub errors: usize,
}

/// Compute similarities for every corpus question, resuming from the
/// ledger. Single-threaded: one batched embedding call per question.
pub fn similarity_corpus(
    gateway: &Gateway,
    model: &str,
    corpus: &Corpus,
    ledger_path: impl AsRef<Path>,
) -> Result<SimilarityOutcome, SimError> {
    let ledger_path = ledger_path.as_ref();
    let mut done: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in read_ledger::<SimilarityRow>(ledger_path)? {
        if let SimilarityRow::Scores {
            question_id,
            similarities,
            ..
        } = row
        {
            done.insert(question_id, similarities);
        }
    }

    let writer = LedgerWriter::append_to(ledger_path)?;
    let mut outcome = SimilarityOutcome::default();
    for q in &corpus.questions {
        if let Some(sims) = done.get(&q.id) {
            if sims.len() == q.hints.len() {
                outcome.by_question.insert(q.id.clone(), sims.clone());
                outcome.skipped += 1;
                continue;
            }
        }
        match question_sentence_similarities(gateway, model, q) {
            Ok(similarities) => {
                writer.append(&SimilarityRow::Scores {
                    question_id: q.id.clone(),
                    model: model.to_string(),
                    similarities: similarities.clone(),
                })?;
                outcome.by_question.insert(q.id.clone(), similarities);
            }
            Err(e) => {
                outcome.errors += 1;
                writer.append(&SimilarityRow::Error {
                    question_id: q.id.clone(),
                    error: e.to_string(),
                })?;
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallCount, Counted, Gateway, ScriptedProvider};
    use convqa_core::corpus::GoldAnswer;
    use std::sync::Arc;

    fn question(id: &str, text: &str, hints: &[&str]) -> Question {
        Question {
            id: id.into(),
            text: text.into(),
            answer: GoldAnswer {
                text: "X".into(),
                aliases: vec![],
            },
            hints: hints.iter().map(|h| h.to_string()).collect(),
        }
    }

    fn hash_gateway() -> (Gateway, CallCount) {
        let (provider, count) =
            Counted::new(ScriptedProvider::new("sim").with_hash_embeddings(24, 11));
        (Gateway::new(Arc::new(provider), None, 2), count)
    }

    #[test]
    fn one_value_per_hint_and_identity_hits_one() {
        let (gw, _) = hash_gateway();
        let q = question("q1", "Where is the tower?", &["Where is the tower?", "Other hint."]);
        let sims = question_sentence_similarities(&gw, "emb", &q).unwrap();
        assert_eq!(sims.len(), 2);
        assert_eq!(sims[0], 1.0);
        assert!(sims[1] < 1.0);
    }

    #[test]
    fn hash_embedder_is_byte_stable_across_runs() {
        let q = question("q1", "Question text?", &["hint a", "hint b", "hint c"]);
        let (gw1, _) = hash_gateway();
        let (gw2, _) = hash_gateway();
        let a = question_sentence_similarities(&gw1, "emb", &q).unwrap();
        let b = question_sentence_similarities(&gw2, "emb", &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_run_resumes_from_ledger() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = dir.path().join("similarity.jsonl");
        let corpus = Corpus {
            questions: vec![
                question("q1", "First?", &["h1", "h2"]),
                question("q2", "Second?", &["h3"]),
            ],
            source_path: String::new(),
        };
        let (gw, count) = hash_gateway();
        let outcome = similarity_corpus(&gw, "emb", &corpus, &ledger).unwrap();
        assert_eq!(outcome.by_question.len(), 2);
        assert_eq!(outcome.by_question["q1"].len(), 2);
        let calls = count.total();
        let rerun = similarity_corpus(&gw, "emb", &corpus, &ledger).unwrap();
        assert_eq!(rerun.skipped, 2);
        assert_eq!(rerun.by_question, outcome.by_question);
        assert_eq!(count.total(), calls);
    }
}
