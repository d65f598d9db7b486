//! Convergence scoring against a gateway: candidate generation, per-hint
//! applicability judgments, relatedness, and the resumable corpus run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use convqa_core::chat::{ChatMessage, ChatRequest};
use convqa_core::convergence::{
    parse_judgment, CandidatePrompts, CandidateSet, ConvergenceRecord, Judgment,
};
use convqa_core::corpus::{Corpus, Question};
use convqa_core::qa::ChatParams;

use crate::gateway::{Gateway, GatewayError};
use crate::ledger::{for_each_ordered, read_ledger, LedgerError, LedgerWriter};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Convergence(#[from] convqa_core::convergence::ConvergenceError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("prompt configuration: {0}")]
    Prompts(#[from] convqa_core::convergence::PromptError),
}

/// Scoring front end bound to one gateway, prompt set, and decoding
/// parameters.
pub struct Scorer<'a> {
    gateway: &'a Gateway,
    prompts: CandidatePrompts,
    params: ChatParams,
    append_gold: bool,
}

impl<'a> Scorer<'a> {
    pub fn new(gateway: &'a Gateway, prompts: CandidatePrompts, params: ChatParams) -> Result<Scorer<'a>, ScoreError> {
        prompts.validate()?;
        Ok(Scorer {
            gateway,
            prompts,
            params,
            append_gold: true,
        })
    }

    fn chat_request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model: self.params.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.params.temperature,
            max_tokens: self.params.max_tokens,
            seed: self.params.seed,
        }
    }

    /// Generate the working candidate set for a question. One generation
    /// call per question; hints share it (and the cache collapses repeats).
    pub fn generate_candidates(&self, question: &Question) -> Result<CandidateSet, ScoreError> {
        let prompt = self.prompts.render_generation(&question.text);
        let response = self.gateway.chat(&self.chat_request(prompt))?;
        Ok(CandidateSet::from_model_output(
            &response.content,
            &question.answer,
            self.append_gold,
        )?)
    }

    /// Ask whether `hint` applies to `candidate`.
    pub fn judge_applicability(
        &self,
        question: &Question,
        hint: &str,
        candidate: &str,
    ) -> Result<Judgment, ScoreError> {
        let prompt = self.prompts.render_judgment(&question.text, hint, candidate);
        let response = self.gateway.chat(&self.chat_request(prompt))?;
        Ok(parse_judgment(&response.content))
    }

    /// Whether the hint applies to the gold answer; the unrelated branch of
    /// the score.
    pub fn is_related(&self, question: &Question, hint: &str) -> Result<bool, ScoreError> {
        let prompt =
            self.prompts
                .render_relatedness(&question.text, hint, &question.answer.text);
        let response = self.gateway.chat(&self.chat_request(prompt))?;
        Ok(parse_judgment(&response.content) == Judgment::Yes)
    }

    /// Score one hint given the question's shared candidate set.
    pub fn score_hint(
        &self,
        question: &Question,
        hint_index: usize,
        candidates: &CandidateSet,
    ) -> Result<ConvergenceRecord, ScoreError> {
        let hint = &question.hints[hint_index];
        let related = self.is_related(question, hint)?;
        let mut judgments = Vec::with_capacity(candidates.len());
        for candidate in candidates.as_slice() {
            judgments.push(self.judge_applicability(question, hint, candidate)?);
        }
        Ok(ConvergenceRecord::from_judgments(
            question.id.clone(),
            hint_index,
            candidates.clone(),
            judgments,
            related,
        )?)
    }

    /// Score every hint of a question, generating candidates once.
    pub fn score_question(&self, question: &Question) -> Result<Vec<ConvergenceRecord>, ScoreError> {
        let candidates = self.generate_candidates(question)?;
        (0..question.hints.len())
            .map(|i| self.score_hint(question, i, &candidates))
            .collect()
    }
}

/// One convergence ledger line: either a scored record or an error row
/// that a later resumed run will retry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConvergenceRow {
    Record(ConvergenceRecord),
    Error {
        question_id: String,
        hint_index: usize,
        error: String,
    },
}

/// Outcome of a corpus scoring run.
#[derive(Debug, Default)]
pub struct ScoreOutcome {
    pub records: Vec<ConvergenceRecord>,
    pub skipped: usize,
    pub errors: usize,
}

impl ScoreOutcome {
    /// Per-question hint-score vectors, for subset construction.
    pub fn by_question(&self, corpus: &Corpus) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for q in &corpus.questions {
            let mut scores = vec![f64::NAN; q.hints.len()];
            let mut have = 0;
            for r in self.records.iter().filter(|r| r.question_id == q.id) {
                if r.hint_index < scores.len() {
                    scores[r.hint_index] = r.score;
                    have += 1;
                }
            }
            if have == q.hints.len() {
                out.insert(q.id.clone(), scores);
            }
        }
        out
    }
}

/// Per-question hint-score vectors recovered from a ledger file. Questions
/// with incomplete coverage are left out.
pub fn scores_from_ledger(
    path: impl AsRef<Path>,
    corpus: &Corpus,
) -> Result<BTreeMap<String, Vec<f64>>, LedgerError> {
    let rows: Vec<ConvergenceRow> = read_ledger(path)?;
    let mut by_pair: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for row in rows {
        if let ConvergenceRow::Record(rec) = row {
            by_pair.insert((rec.question_id.clone(), rec.hint_index), rec.score);
        }
    }
    let mut out = BTreeMap::new();
    for q in &corpus.questions {
        let scores: Vec<f64> = (0..q.hints.len())
            .filter_map(|i| by_pair.get(&(q.id.clone(), i)).copied())
            .collect();
        if scores.len() == q.hints.len() {
            out.insert(q.id.clone(), scores);
        }
    }
    Ok(out)
}

/// Score a whole corpus, one ledger row per (question, hint), in corpus
/// order. Rows already in the ledger are not recomputed; per-hint failures
/// become error rows and the run continues.
pub fn score_corpus(
    scorer: &Scorer,
    corpus: &Corpus,
    ledger_path: impl AsRef<Path>,
    workers: usize,
) -> Result<ScoreOutcome, ScoreError> {
    let ledger_path = ledger_path.as_ref();
    let existing: Vec<ConvergenceRow> = read_ledger(ledger_path)?;
    let mut done: BTreeMap<(String, usize), ConvergenceRecord> = BTreeMap::new();
    for row in existing {
        if let ConvergenceRow::Record(rec) = row {
            done.insert((rec.question_id.clone(), rec.hint_index), rec);
        }
    }

    let writer = LedgerWriter::append_to(ledger_path)?;
    let mut outcome = ScoreOutcome::default();

    // Collect finished rows first so resumed questions cost zero calls.
    let mut todo: Vec<&Question> = Vec::new();
    for q in &corpus.questions {
        let complete = (0..q.hints.len()).all(|i| done.contains_key(&(q.id.clone(), i)));
        if complete {
            outcome.skipped += 1;
            for i in 0..q.hints.len() {
                outcome
                    .records
                    .push(done[&(q.id.clone(), i)].clone());
            }
        } else {
            todo.push(q);
        }
    }

    type QuestionResult = Vec<(usize, Result<ConvergenceRecord, String>)>;
    let task = |qi: usize| -> QuestionResult {
        let q = todo[qi];
        let candidates = match scorer.generate_candidates(q) {
            Ok(c) => c,
            Err(e) => {
                return (0..q.hints.len())
                    .map(|i| (i, Err(e.to_string())))
                    .collect()
            }
        };
        (0..q.hints.len())
            .map(|i| {
                if let Some(rec) = done.get(&(q.id.clone(), i)) {
                    return (i, Ok(rec.clone()));
                }
                (i, scorer.score_hint(q, i, &candidates).map_err(|e| e.to_string()))
            })
            .collect()
    };

    for_each_ordered(
        todo.len(),
        workers,
        task,
        |qi, results: QuestionResult| -> Result<(), ScoreError> {
            let q = todo[qi];
            for (i, result) in results {
                match result {
                    Ok(rec) => {
                        if !done.contains_key(&(q.id.clone(), i)) {
                            writer.append(&ConvergenceRow::Record(rec.clone()))?;
                        }
                        outcome.records.push(rec);
                    }
                    Err(error) => {
                        outcome.errors += 1;
                        writer.append(&ConvergenceRow::Error {
                            question_id: q.id.clone(),
                            hint_index: i,
                            error,
                        })?;
                    }
                }
            }
            Ok(())
        },
    )?;

    // Keep records in (corpus order, hint order) regardless of resume path.
    let order: BTreeMap<&str, usize> = corpus
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.as_str(), i))
        .collect();
    outcome
        .records
        .sort_by_key(|r| (order.get(r.question_id.as_str()).copied(), r.hint_index));
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Cache, CallCount, Counted, Gateway, Matcher, ScriptedProvider};
    use convqa_core::corpus::GoldAnswer;
    use std::sync::Arc;

    fn question(id: &str, hints: &[&str]) -> Question {
        Question {
            id: id.into(),
            text: format!("Which country is described ({id})?"),
            answer: GoldAnswer {
                text: "China".into(),
                aliases: vec![],
            },
            hints: hints.iter().map(|h| h.to_string()).collect(),
        }
    }

    /// Script: candidates are four countries; "Beijing" hints apply to
    /// China only; "Asia" hints apply to China and India; "Andes" hints
    /// apply to Peru only (so they are unrelated to the gold answer).
    fn scripted() -> ScriptedProvider {
        ScriptedProvider::new("conv-test")
            .chat_substring(
                "List plausible candidate answers",
                "1. China\n2. India\n3. Peru\n4. Egypt",
            )
            .chat_rule(judge("Beijing", "China"), "Yes")
            .chat_rule(judge("Asia", "China"), "Yes")
            .chat_rule(judge("Asia", "India"), "Yes")
            .chat_rule(judge("Andes", "Peru"), "Yes")
            .chat_any("No")
    }

    fn judge(hint_word: &str, candidate: &str) -> Matcher {
        Matcher::Substring(format!("{hint_word}.\nCandidate answer: {candidate}\n"))
    }

    fn gateway(provider: ScriptedProvider) -> (Gateway, CallCount) {
        let (counted, count) = Counted::new(provider);
        (Gateway::new(Arc::new(counted), None, 2), count)
    }

    fn scorer(gateway: &Gateway) -> Scorer<'_> {
        Scorer::new(
            gateway,
            CandidatePrompts::default(),
            ChatParams {
                model: "judge".into(),
                ..ChatParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn related_hint_scores_by_survivor_count() {
        let (gw, _) = gateway(scripted());
        let scorer = scorer(&gw);
        let q = question("q1", &["Its capital is Beijing.", "It is in Asia."]);
        let candidates = scorer.generate_candidates(&q).unwrap();
        assert_eq!(candidates.len(), 4);

        // Unique hint: only the gold answer survives.
        let rec = scorer.score_hint(&q, 0, &candidates).unwrap();
        assert!(rec.related);
        assert_eq!(rec.score, 1.0);

        // Shared hint: two survivors of four.
        let rec = scorer.score_hint(&q, 1, &candidates).unwrap();
        assert_eq!(rec.score, 1.0 - 1.0 / 4.0);
    }

    #[test]
    fn unrelated_hint_scores_zero() {
        let (gw, _) = gateway(scripted());
        let scorer = scorer(&gw);
        let q = question("q1", &["It spans the Andes."]);
        let candidates = scorer.generate_candidates(&q).unwrap();
        let rec = scorer.score_hint(&q, 0, &candidates).unwrap();
        assert!(!rec.related);
        assert_eq!(rec.score, 0.0);
        // Judgments were still collected (Peru says yes).
        assert_eq!(
            rec.judgments.iter().filter(|j| **j == Judgment::Yes).count(),
            1
        );
    }

    #[test]
    fn hint_equal_to_gold_answer_is_related() {
        let provider = ScriptedProvider::new("self")
            .chat_substring("List plausible candidate answers", "1. China\n2. India")
            .chat_rule(judge("China", "China"), "Yes")
            .chat_any("No");
        let (gw, _) = gateway(provider);
        let scorer = scorer(&gw);
        let q = question("q1", &["China."]);
        let candidates = scorer.generate_candidates(&q).unwrap();
        let rec = scorer.score_hint(&q, 0, &candidates).unwrap();
        assert!(rec.related);
    }

    #[test]
    fn corpus_run_writes_one_row_per_hint_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = dir.path().join("convergence.jsonl");
        let cache = Cache::new(dir.path().join("cache")).unwrap();
        let (counted, count) = Counted::new(scripted());
        let gw = Gateway::new(Arc::new(counted), Some(cache), 2);
        let scorer = scorer(&gw);
        let corpus = Corpus {
            questions: vec![
                question("q1", &["Its capital is Beijing.", "It is in Asia."]),
                question("q2", &["It is in Asia.", "It spans the Andes."]),
            ],
            source_path: String::new(),
        };
        let outcome = score_corpus(&scorer, &corpus, &ledger, 2).unwrap();
        assert_eq!(outcome.records.len(), 4);
        assert_eq!(outcome.errors, 0);
        let calls_after_first = count.total();
        assert!(calls_after_first > 0);

        // Rerun over the complete ledger: zero gateway calls, same records.
        let rerun = score_corpus(&scorer, &corpus, &ledger, 2).unwrap();
        assert_eq!(rerun.records, outcome.records);
        assert_eq!(rerun.skipped, 2);
        assert_eq!(count.total(), calls_after_first);

        let rows: Vec<ConvergenceRow> = read_ledger(&ledger).unwrap();
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn failures_become_error_rows_and_run_continues() {
        // No fallback rule: judgments for q2's hint miss the script.
        let provider = ScriptedProvider::new("partial")
            .chat_substring("List plausible candidate answers", "1. China\n2. India")
            .chat_rule(judge("Beijing", "China"), "Yes")
            .chat_rule(judge("Beijing", "India"), "No")
            .chat_rule(
                Matcher::Substring("Hint: Its capital is Beijing.\nCandidate answer: China".to_string()),
                "Yes",
            );
        let (gw, _) = gateway(provider);
        let scorer = scorer(&gw);
        let corpus = Corpus {
            questions: vec![
                question("q1", &["Its capital is Beijing."]),
                question("q2", &["Mystery hint."]),
            ],
            source_path: String::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let ledger = dir.path().join("convergence.jsonl");
        let outcome = score_corpus(&scorer, &corpus, &ledger, 1).unwrap();
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.errors, 1);
        let rows: Vec<ConvergenceRow> = read_ledger(&ledger).unwrap();
        assert!(matches!(rows[1], ConvergenceRow::Error { .. }));
    }

    #[test]
    fn by_question_requires_complete_coverage() {
        let (gw, _) = gateway(scripted());
        let scorer = scorer(&gw);
        let q1 = question("q1", &["Its capital is Beijing.", "It is in Asia."]);
        let corpus = Corpus {
            questions: vec![q1],
            source_path: String::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let outcome = score_corpus(&scorer, &corpus, dir.path().join("l.jsonl"), 1).unwrap();
        let by_q = outcome.by_question(&corpus);
        assert_eq!(by_q["q1"], vec![1.0, 0.75]);
    }
}
