//! Answer passages with the few-shot protocol and ledger the predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use convqa_core::corpus::Corpus;
use convqa_core::qa::{build_prompt, ChatParams, FewShotExemplar, QAPrediction};
use convqa_core::subsets::{Group, Method, Ordering, PassageInstance};

use crate::gateway::Gateway;
use crate::ledger::{for_each_ordered, read_ledger, LedgerError, LedgerWriter};

pub use convqa_core::qa::{default_shots, extract_answer, validate_shots};

/// One answering model: the report column tag plus decoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerModel {
    pub tag: String,
    pub params: ChatParams,
}

impl AnswerModel {
    pub fn new(tag: impl Into<String>, params: ChatParams) -> AnswerModel {
        AnswerModel {
            tag: tag.into(),
            params,
        }
    }
}

/// One prediction ledger line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictionRow {
    Prediction(QAPrediction),
    Error {
        question_id: String,
        method: Method,
        group: Group,
        ordering: Ordering,
        hint_indices: Vec<usize>,
        model: String,
        error: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum AnswerError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("shot configuration: {0}")]
    Shots(#[from] convqa_core::qa::ExemplarError),
}

#[derive(Debug, Default)]
pub struct AnswerOutcome {
    pub predictions: Vec<QAPrediction>,
    pub skipped: usize,
    pub errors: usize,
}

type PredictionKey = (String, Method, Group, Ordering, Vec<usize>, String);

fn key_of(p: &QAPrediction) -> PredictionKey {
    (
        p.question_id.clone(),
        p.method,
        p.group,
        p.ordering,
        p.hint_indices.clone(),
        p.model.clone(),
    )
}

/// Answer every (passage × model) pair, model-major, resuming from the
/// ledger. Per-pair failures become error rows and the run continues.
pub fn answer_passages(
    gateway: &Gateway,
    passages: &[PassageInstance],
    corpus: &Corpus,
    shots: &[FewShotExemplar],
    models: &[AnswerModel],
    ledger_path: impl AsRef<Path>,
    workers: usize,
) -> Result<AnswerOutcome, AnswerError> {
    validate_shots(shots)?;
    let ledger_path = ledger_path.as_ref();
    let mut done: BTreeMap<PredictionKey, QAPrediction> = BTreeMap::new();
    for row in read_ledger::<PredictionRow>(ledger_path)? {
        if let PredictionRow::Prediction(p) = row {
            done.insert(key_of(&p), p);
        }
    }

    let questions: BTreeMap<&str, &convqa_core::corpus::Question> = corpus
        .questions
        .iter()
        .map(|q| (q.id.as_str(), q))
        .collect();

    let writer = LedgerWriter::append_to(ledger_path)?;
    let mut outcome = AnswerOutcome::default();

    let n_tasks = models.len() * passages.len();
    let task = |index: usize| -> PredictionRow {
        let model = &models[index / passages.len()];
        let passage = &passages[index % passages.len()];
        let error_row = |error: String| PredictionRow::Error {
            question_id: passage.question_id.clone(),
            method: passage.method,
            group: passage.group,
            ordering: passage.ordering,
            hint_indices: passage.hint_indices.clone(),
            model: model.tag.clone(),
            error,
        };
        let Some(question) = questions.get(passage.question_id.as_str()) else {
            return error_row("question not found in corpus".into());
        };
        let probe = QAPrediction {
            question_id: passage.question_id.clone(),
            method: passage.method,
            group: passage.group,
            ordering: passage.ordering,
            hint_indices: passage.hint_indices.clone(),
            model: model.tag.clone(),
            raw_output: String::new(),
            answer: String::new(),
            abstained: false,
        };
        if let Some(existing) = done.get(&key_of(&probe)) {
            return PredictionRow::Prediction(existing.clone());
        }
        let request = build_prompt(&passage.text, &question.text, shots, &model.params);
        match gateway.chat(&request) {
            Ok(response) => {
                let prediction = QAPrediction::from_raw(passage, model.tag.clone(), response.content);
                PredictionRow::Prediction(prediction)
            }
            Err(e) => error_row(e.to_string()),
        }
    };

    for_each_ordered(n_tasks, workers, task, |index, row| -> Result<(), AnswerError> {
        match row {
            PredictionRow::Prediction(p) => {
                let resumed = {
                    let model = &models[index / passages.len()];
                    let passage = &passages[index % passages.len()];
                    done.contains_key(&(
                        passage.question_id.clone(),
                        passage.method,
                        passage.group,
                        passage.ordering,
                        passage.hint_indices.clone(),
                        model.tag.clone(),
                    ))
                };
                if resumed {
                    outcome.skipped += 1;
                } else {
                    writer.append(&PredictionRow::Prediction(p.clone()))?;
                }
                outcome.predictions.push(p);
            }
            row @ PredictionRow::Error { .. } => {
                outcome.errors += 1;
                writer.append(&row)?;
            }
        }
        Ok(())
    })?;

    Ok(outcome)
}

/// Distinct model tags present in a prediction list, in first-seen order.
pub fn model_tags(predictions: &[QAPrediction]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut tags = Vec::new();
    for p in predictions {
        if seen.insert(p.model.clone()) {
            tags.push(p.model.clone());
        }
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Cache, CallCount, Counted, Gateway, ScriptedProvider};
    use convqa_core::corpus::GoldAnswer;
    use convqa_core::qa::SYSTEM_PROMPT;
    use std::sync::Arc;

    fn corpus() -> Corpus {
        Corpus {
            questions: vec![convqa_core::corpus::Question {
                id: "q1".into(),
                text: "Which country borders 14 others?".into(),
                answer: GoldAnswer {
                    text: "China".into(),
                    aliases: vec![],
                },
                hints: vec![
                    "Its capital is Beijing.".into(),
                    "Its population is more than 1 billion.".into(),
                    "It has a very long wall.".into(),
                ],
            }],
            source_path: String::new(),
        }
    }

    fn passage(ordering: Ordering, hint_indices: Vec<usize>, text: &str) -> PassageInstance {
        PassageInstance {
            question_id: "q1".into(),
            method: Method::Convergence,
            group: Group::High,
            ordering,
            hint_indices,
            conv_avg: 0.9,
            cos_avg: 0.5,
            text: text.into(),
        }
    }

    fn answer_gateway(dir: &std::path::Path) -> (Gateway, CallCount) {
        let provider = ScriptedProvider::new("answerer")
            .chat_substring("Its capital is Beijing.", "China")
            .chat_any("NO ANSWER");
        let (counted, count) = Counted::new(provider);
        (
            Gateway::new(
                Arc::new(counted),
                Some(Cache::new(dir.join("cache")).unwrap()),
                2,
            ),
            count,
        )
    }

    fn models() -> Vec<AnswerModel> {
        vec![AnswerModel::new(
            "scripted-a",
            ChatParams {
                model: "scripted-a".into(),
                ..ChatParams::default()
            },
        )]
    }

    #[test]
    fn one_prediction_per_passage_keyed_by_model() {
        let dir = tempfile::tempdir().unwrap();
        let (gw, _) = answer_gateway(dir.path());
        let passages = vec![
            passage(Ordering::Canonical, vec![0, 1], "Its capital is Beijing.\nmore"),
            passage(Ordering::Canonical, vec![1, 2], "no clue here"),
        ];
        let two_models = vec![
            models().remove(0),
            AnswerModel::new(
                "scripted-b",
                ChatParams {
                    model: "scripted-b".into(),
                    ..ChatParams::default()
                },
            ),
        ];
        let outcome = answer_passages(
            &gw,
            &passages,
            &corpus(),
            &default_shots(),
            &two_models,
            dir.path().join("predictions.jsonl"),
            2,
        )
        .unwrap();
        assert_eq!(outcome.predictions.len(), 4);
        assert_eq!(outcome.errors, 0);
        assert_eq!(model_tags(&outcome.predictions), vec!["scripted-a", "scripted-b"]);
        // First passage contains the marker hint: answered with the gold.
        assert_eq!(outcome.predictions[0].answer, "China");
        assert!(!outcome.predictions[0].abstained);
        assert!(outcome.predictions[1].abstained);
    }

    #[test]
    fn warm_rerun_is_identical_with_zero_calls() {
        let dir = tempfile::tempdir().unwrap();
        let (gw, count) = answer_gateway(dir.path());
        let passages = vec![passage(
            Ordering::Canonical,
            vec![0, 1],
            "Its capital is Beijing.\nmore",
        )];
        let ledger = dir.path().join("predictions.jsonl");
        let first = answer_passages(
            &gw,
            &passages,
            &corpus(),
            &default_shots(),
            &models(),
            &ledger,
            1,
        )
        .unwrap();
        let calls = count.total();
        let second = answer_passages(
            &gw,
            &passages,
            &corpus(),
            &default_shots(),
            &models(),
            &ledger,
            1,
        )
        .unwrap();
        assert_eq!(second.predictions, first.predictions);
        assert_eq!(second.skipped, 1);
        assert_eq!(count.total(), calls);
        let rows: Vec<PredictionRow> = read_ledger(&ledger).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn unknown_question_becomes_error_row() {
        let dir = tempfile::tempdir().unwrap();
        let (gw, _) = answer_gateway(dir.path());
        let mut orphan = passage(Ordering::Canonical, vec![0], "text");
        orphan.question_id = "missing".into();
        let outcome = answer_passages(
            &gw,
            &[orphan],
            &corpus(),
            &default_shots(),
            &models(),
            dir.path().join("p.jsonl"),
            1,
        )
        .unwrap();
        assert_eq!(outcome.errors, 1);
        assert!(outcome.predictions.is_empty());
    }

    #[test]
    fn prompt_sent_to_gateway_carries_protocol() {
        // The scripted matcher sees the full rendered request, so a match on
        // the system text proves the protocol made it to the wire.
        let dir = tempfile::tempdir().unwrap();
        let provider = ScriptedProvider::new("protocol")
            .chat_substring(SYSTEM_PROMPT, "China")
            .chat_any("unexpected");
        let gw = Gateway::new(Arc::new(provider), None, 1);
        let outcome = answer_passages(
            &gw,
            &[passage(Ordering::Canonical, vec![0], "ctx")],
            &corpus(),
            &default_shots(),
            &models(),
            dir.path().join("p.jsonl"),
            1,
        )
        .unwrap();
        assert_eq!(outcome.predictions[0].answer, "China");
    }
}
