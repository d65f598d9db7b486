//! Answer normalization, ExactMatch, token-level Precision/Recall/F1, and
//! aggregation of predictions into report cells.
//!
//! Normalization and the token-overlap scores follow the de-facto standard
//! for open-domain QA: case-fold, strip punctuation, drop the articles
//! `a`/`an`/`the`, collapse whitespace, then compare whitespace tokens as
//! multisets.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::GoldAnswer;
use crate::qa::QAPrediction;
use crate::subsets::{Group, Method, Ordering};

/// Canonical abstention token. Predictions equal to this string (byte-exact)
/// are graded as abstentions.
pub const NO_ANSWER: &str = "NO ANSWER";

/// Normalize an answer string for comparison.
///
/// Lowercases, deletes ASCII punctuation, removes `a`/`an`/`the` as whole
/// tokens, and collapses runs of whitespace to single spaces.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let mut out = String::with_capacity(no_punct.len());
    for token in no_punct.split_whitespace() {
        if matches!(token, "a" | "an" | "the") {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Per-prediction metric values, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub em: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricScores {
    pub const ZERO: MetricScores = MetricScores {
        em: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// ExactMatch against the gold answer text or any alias. Abstentions score 0.
pub fn exact_match(prediction: &str, gold: &GoldAnswer) -> u8 {
    if prediction == NO_ANSWER {
        return 0;
    }
    let pred = normalize(prediction);
    if gold.normalized_forms().any(|g| g == pred) {
        1
    } else {
        0
    }
}

/// Token-level precision/recall/F1 over normalized whitespace tokens, with
/// overlap counted as multiset intersection. The best-scoring gold form
/// (text or alias, compared by F1 then precision) is used.
///
/// Abstentions score (0, 0, 0) unless some gold form normalizes to
/// `"no answer"`, in which case they are graded like any other string.
pub fn token_prf(prediction: &str, gold: &GoldAnswer) -> (f64, f64, f64) {
    if prediction == NO_ANSWER && !gold.normalized_forms().any(|g| g == "no answer") {
        return (0.0, 0.0, 0.0);
    }
    let pred_norm = normalize(prediction);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();

    let mut best = (0.0, 0.0, 0.0);
    let mut first = true;
    for form in gold.forms() {
        let gold_norm = normalize(form);
        let gold_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
        let scores = prf_over_tokens(&pred_tokens, &gold_tokens);
        if first || (scores.2, scores.0) > (best.2, best.0) {
            best = scores;
            first = false;
        }
    }
    best
}

fn prf_over_tokens(pred: &[&str], gold: &[&str]) -> (f64, f64, f64) {
    if pred.is_empty() || gold.is_empty() {
        // Both empty counts as a match; one-sided empty cannot overlap.
        return if pred.is_empty() && gold.is_empty() {
            (1.0, 1.0, 1.0)
        } else {
            (0.0, 0.0, 0.0)
        };
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return (0.0, 0.0, 0.0);
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    let f1 = 2.0 * precision * recall / (precision + recall);
    (precision, recall, f1)
}

/// Score one prediction against its gold answer.
pub fn score_prediction(prediction: &str, gold: &GoldAnswer) -> MetricScores {
    let em = exact_match(prediction, gold) as f64;
    let (precision, recall, f1) = token_prf(prediction, gold);
    MetricScores {
        em,
        precision,
        recall,
        f1,
    }
}

/// How cell means are computed: over every (question, passage) prediction
/// pair, or macro-averaged per question first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationUnit {
    PerPassage,
    PerQuestion,
}

/// Key of one report cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub method: Method,
    pub group: Group,
    pub ordering: Ordering,
    pub model: String,
}

/// One aggregated report row: mean metrics (still in `[0, 1]`) and the
/// number of predictions behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub key: CellKey,
    pub count: usize,
    pub mean: MetricScores,
}

/// Aggregated evaluation results, row order fixed by `CellKey`'s ordering
/// (method, then group with High before Low, then ordering, then model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn find(&self, method: Method, group: Group, ordering: Ordering, model: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.key.method == method && r.key.group == group && r.key.ordering == ordering && r.key.model == model)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("prediction references unknown question id `{0}`")]
    UnknownQuestion(String),
    #[error("no predictions to aggregate")]
    EmptyPredictions,
}

/// Aggregate predictions into per-(method, group, ordering, model) means.
///
/// `golds` maps question ids to their gold answers. Empty cells simply do
/// not appear in the output.
pub fn aggregate(
    predictions: &[QAPrediction],
    golds: &BTreeMap<String, GoldAnswer>,
    unit: AggregationUnit,
) -> Result<EvalReport, AggregateError> {
    if predictions.is_empty() {
        return Err(AggregateError::EmptyPredictions);
    }
    // cell -> question id -> per-prediction scores
    let mut cells: BTreeMap<CellKey, BTreeMap<&str, Vec<MetricScores>>> = BTreeMap::new();
    for pred in predictions {
        let gold = golds
            .get(&pred.question_id)
            .ok_or_else(|| AggregateError::UnknownQuestion(pred.question_id.clone()))?;
        let key = CellKey {
            method: pred.method,
            group: pred.group,
            ordering: pred.ordering,
            model: pred.model.clone(),
        };
        let scores = score_prediction(&pred.answer, gold);
        cells
            .entry(key)
            .or_default()
            .entry(pred.question_id.as_str())
            .or_default()
            .push(scores);
    }

    let rows = cells
        .into_iter()
        .map(|(key, by_question)| {
            let (count, mean) = match unit {
                AggregationUnit::PerPassage => {
                    let all: Vec<MetricScores> =
                        by_question.values().flatten().copied().collect();
                    (all.len(), mean_scores(&all))
                }
                AggregationUnit::PerQuestion => {
                    let per_q: Vec<MetricScores> = by_question
                        .values()
                        .map(|scores| mean_scores(scores))
                        .collect();
                    let n: usize = by_question.values().map(Vec::len).sum();
                    (n, mean_scores(&per_q))
                }
            };
            ReportRow { key, count, mean }
        })
        .collect();
    Ok(EvalReport { rows })
}

fn mean_scores(scores: &[MetricScores]) -> MetricScores {
    if scores.is_empty() {
        return MetricScores::ZERO;
    }
    let n = scores.len() as f64;
    MetricScores {
        em: scores.iter().map(|s| s.em).sum::<f64>() / n,
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

impl GoldAnswer {
    /// The gold text followed by its aliases.
    pub fn forms(&self) -> impl Iterator<Item = &str> {
        core::iter::once(self.text.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    /// Normalized forms of the gold text and aliases.
    pub fn normalized_forms(&self) -> impl Iterator<Item = String> + '_ {
        self.forms().map(normalize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(text: &str, aliases: &[&str]) -> GoldAnswer {
        GoldAnswer {
            text: text.to_owned(),
            aliases: aliases.iter().map(|s| (*s).to_owned()).collect(),
        }
    }

    #[test]
    fn normalize_strips_articles_case_and_punctuation() {
        assert_eq!(normalize("The Eiffel Tower."), "eiffel tower");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("China"), "china");
        assert_eq!(normalize("  a   An THE  "), "");
        assert_eq!(normalize("Obama's \"victory\"!"), "obamas victory");
    }

    #[test]
    fn exact_match_gold_and_aliases() {
        let g = gold("Barack Obama", &["Obama"]);
        assert_eq!(exact_match("Barack Obama", &g), 1);
        assert_eq!(exact_match("the obama.", &g), 1);
        assert_eq!(exact_match("Michelle Obama", &g), 0);
        assert_eq!(exact_match("the China", &gold("China", &[])), 1);
    }

    #[test]
    fn exact_match_abstention_scores_zero() {
        assert_eq!(exact_match(NO_ANSWER, &gold("China", &[])), 0);
        // Even a gold that normalizes to "no answer" does not rescue EM.
        assert_eq!(exact_match(NO_ANSWER, &gold("no answer", &[])), 0);
    }

    #[test]
    fn token_prf_partial_overlap() {
        let (p, r, f1) = token_prf("Barack Obama", &gold("Obama", &[]));
        assert_eq!(p, 0.5);
        assert_eq!(r, 1.0);
        assert_eq!(f1, 2.0 * 0.5 / 1.5);
    }

    #[test]
    fn token_prf_identity_and_disjoint() {
        assert_eq!(token_prf("exact match", &gold("exact match", &[])), (1.0, 1.0, 1.0));
        assert_eq!(token_prf("apples", &gold("oranges", &[])), (0.0, 0.0, 0.0));
    }

    #[test]
    fn token_prf_multiset_overlap() {
        // pred {b:2, c:1} vs gold {b:1, c:2}: common = 2
        let (p, r, f1) = token_prf("b b c", &gold("b c c", &[]));
        assert_eq!(p, 2.0 / 3.0);
        assert_eq!(r, 2.0 / 3.0);
        assert_eq!(f1, 2.0 / 3.0);
    }

    #[test]
    fn token_prf_picks_best_gold_form() {
        let g = gold("forty second president", &["Bill Clinton"]);
        let (p, r, f1) = token_prf("Bill Clinton", &g);
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn token_prf_abstention() {
        assert_eq!(token_prf(NO_ANSWER, &gold("China", &[])), (0.0, 0.0, 0.0));
        // A gold alias normalizing to "no answer" grades the abstention normally.
        let g = gold("unanswerable", &["no answer"]);
        assert_eq!(token_prf(NO_ANSWER, &g), (1.0, 1.0, 1.0));
    }

    #[test]
    fn em_implies_f1_one() {
        let g = gold("The Eiffel Tower", &[]);
        assert_eq!(exact_match("eiffel tower!", &g), 1);
        let (_, _, f1) = token_prf("eiffel tower!", &g);
        assert_eq!(f1, 1.0);
    }
}
