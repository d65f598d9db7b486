//! The convergence metric: how effectively a hint eliminates incorrect
//! candidate answers.
//!
//! Scoring follows a three-stage procedure: generate up to
//! [`MAX_CANDIDATES`] plausible candidate answers for the question, judge
//! per candidate whether the hint applies to it (Yes/No), then score
//!
//! ```text
//! S_con = 0                       if the hint is unrelated to the gold answer
//! S_con = 1 - (|V| - 1) / |C|     otherwise
//! ```
//!
//! where `|C|` is the size of the working candidate set (the gold answer is
//! appended when the generator omitted it) and `|V|` is the number of Yes
//! judgments. Scores are clamped to `[0, 1]` to cover the `|V| = 0` corner
//! the formula leaves undefined.
//!
//! Everything here is pure; issuing the underlying model calls is the
//! harness's job.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::GoldAnswer;
use crate::metrics::normalize;

/// Cap on generated candidate answers. The working set may hold one more
/// entry when the gold answer is appended.
pub const MAX_CANDIDATES: usize = 20;

/// Binary applicability judgment for one (hint, candidate) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Judgment {
    Yes,
    No,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConvergenceError {
    #[error("model output contained no parseable candidates")]
    EmptyCandidates,
    #[error("judgment count {judgments} does not match candidate count {candidates}")]
    JudgmentMismatch { candidates: usize, judgments: usize },
}

/// Eq.-1 convergence score for a hint, given the working-set size, the
/// Yes-judgment count, and whether the hint applies to the gold answer.
pub fn convergence_score(candidate_count: usize, yes_count: usize, related: bool) -> f64 {
    debug_assert!(candidate_count >= 1);
    if !related {
        return 0.0;
    }
    let raw = 1.0 - (yes_count as f64 - 1.0) / candidate_count as f64;
    raw.clamp(0.0, 1.0)
}

/// Ordered candidate answers, distinct under [`normalize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateSet {
    candidates: Vec<String>,
}

impl CandidateSet {
    /// Parse raw model output into the working candidate set.
    ///
    /// Accepts numbered ("12. text", "3) text"), bulleted ("- text",
    /// "* text"), or bare lines; strips trailing sentence punctuation;
    /// drops duplicates under [`normalize`]; truncates to
    /// [`MAX_CANDIDATES`]. When no candidate normalizes equal to the gold
    /// text or an alias and `append_gold` is set, the gold text is appended.
    pub fn from_model_output(
        raw: &str,
        gold: &GoldAnswer,
        append_gold: bool,
    ) -> Result<CandidateSet, ConvergenceError> {
        let mut candidates = parse_candidate_lines(raw, MAX_CANDIDATES);
        if candidates.is_empty() && !append_gold {
            return Err(ConvergenceError::EmptyCandidates);
        }
        if append_gold {
            let forms: Vec<String> = gold.normalized_forms().collect();
            let has_gold = candidates.iter().any(|c| forms.contains(&normalize(c)));
            if !has_gold {
                candidates.push(gold.text.trim().to_string());
            }
        }
        if candidates.is_empty() {
            return Err(ConvergenceError::EmptyCandidates);
        }
        Ok(CandidateSet { candidates })
    }

    pub fn as_slice(&self) -> &[String] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn into_vec(self) -> Vec<String> {
        self.candidates
    }
}

fn parse_candidate_lines(raw: &str, cap: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for line in raw.lines() {
        let item = strip_list_marker(line.trim());
        let item = item.trim_end_matches(['.', ',', ';', ':', '!', '?']).trim_end();
        if item.is_empty() {
            continue;
        }
        let key = normalize(item);
        if key.is_empty() || seen.contains(&key) {
            continue;
        }
        seen.push(key);
        out.push(item.to_string());
        if out.len() == cap {
            break;
        }
    }
    out
}

fn strip_list_marker(line: &str) -> &str {
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(stripped) = rest.strip_prefix(['.', ')']) {
            return stripped.trim_start();
        }
    }
    if let Some(stripped) = line.strip_prefix(['-', '*']) {
        return stripped.trim_start();
    }
    line
}

/// Map a raw judge response to Yes/No: Yes iff the first alphabetic token,
/// case-folded, is "yes".
pub fn parse_judgment(raw: &str) -> Judgment {
    let trimmed = raw.trim();
    let start = match trimmed.find(|c: char| c.is_alphabetic()) {
        Some(i) => i,
        None => return Judgment::No,
    };
    let token: String = trimmed[start..]
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    if token.to_lowercase() == "yes" {
        Judgment::Yes
    } else {
        Judgment::No
    }
}

/// Per-(question, hint) scoring evidence and result. Serializes to one run
/// ledger line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub question_id: String,
    pub hint_index: usize,
    pub candidates: Vec<String>,
    pub judgments: Vec<Judgment>,
    pub related: bool,
    pub score: f64,
}

impl ConvergenceRecord {
    /// Assemble a record, computing the score from the judgments.
    pub fn from_judgments(
        question_id: String,
        hint_index: usize,
        candidates: CandidateSet,
        judgments: Vec<Judgment>,
        related: bool,
    ) -> Result<ConvergenceRecord, ConvergenceError> {
        if judgments.len() != candidates.len() {
            return Err(ConvergenceError::JudgmentMismatch {
                candidates: candidates.len(),
                judgments: judgments.len(),
            });
        }
        let yes = judgments.iter().filter(|j| **j == Judgment::Yes).count();
        let score = convergence_score(candidates.len(), yes, related);
        Ok(ConvergenceRecord {
            question_id,
            hint_index,
            candidates: candidates.into_vec(),
            judgments,
            related,
            score,
        })
    }
}

/// Prompt templates for the three scoring stages. Placeholders are
/// `{question}`, `{hint}`, `{candidate}`, and `{answer}`; each operation's
/// placeholders must appear exactly once in its template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePrompts {
    pub generation: String,
    pub judgment: String,
    pub relatedness: String,
}

impl Default for CandidatePrompts {
    fn default() -> Self {
        // The relatedness default renders byte-identically to the judgment
        // default when the candidate is the gold answer, so the relatedness
        // call and the gold candidate's judgment share one cache entry.
        CandidatePrompts {
            generation: "List plausible candidate answers to the question below. \
                         Give up to 20 candidates, one per line, as a numbered list. \
                         Do not explain.\n\nQuestion: {question}"
                .to_string(),
            judgment: "Question: {question}\nHint: {hint}\nCandidate answer: {candidate}\n\n\
                       Does the hint apply to this candidate answer? Reply with Yes or No only."
                .to_string(),
            relatedness: "Question: {question}\nHint: {hint}\nCandidate answer: {answer}\n\n\
                          Does the hint apply to this candidate answer? Reply with Yes or No only."
                .to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("template `{template}` must contain placeholder `{placeholder}` exactly once (found {found})")]
pub struct PromptError {
    pub template: &'static str,
    pub placeholder: &'static str,
    pub found: usize,
}

impl CandidatePrompts {
    pub fn validate(&self) -> Result<(), PromptError> {
        check_placeholders(&self.generation, "generation", &["{question}"])?;
        check_placeholders(&self.judgment, "judgment", &["{question}", "{hint}", "{candidate}"])?;
        check_placeholders(&self.relatedness, "relatedness", &["{question}", "{hint}", "{answer}"])?;
        Ok(())
    }

    pub fn render_generation(&self, question: &str) -> String {
        self.generation.replace("{question}", question)
    }

    pub fn render_judgment(&self, question: &str, hint: &str, candidate: &str) -> String {
        self.judgment
            .replace("{question}", question)
            .replace("{hint}", hint)
            .replace("{candidate}", candidate)
    }

    pub fn render_relatedness(&self, question: &str, hint: &str, answer: &str) -> String {
        self.relatedness
            .replace("{question}", question)
            .replace("{hint}", hint)
            .replace("{answer}", answer)
    }
}

fn check_placeholders(
    template: &str,
    name: &'static str,
    placeholders: &[&'static str],
) -> Result<(), PromptError> {
    for placeholder in placeholders {
        let found = template.matches(placeholder).count();
        if found != 1 {
            return Err(PromptError {
                template: name,
                placeholder,
                found,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn gold(text: &str) -> GoldAnswer {
        GoldAnswer {
            text: text.to_string(),
            aliases: vec![],
        }
    }

    // Direct Eq.-1 evaluation, kept independent of the implementation path.
    fn eq1_oracle(c: usize, v: usize, related: bool) -> f64 {
        if !related {
            0.0
        } else {
            (1.0 - (v as f64 - 1.0) / c as f64).clamp(0.0, 1.0)
        }
    }

    #[test]
    fn score_matches_stated_cases() {
        assert_eq!(convergence_score(20, 1, true), 1.0);
        assert_eq!(convergence_score(10, 4, false), 0.0);
        assert_eq!(convergence_score(10, 4, true), 0.7);
        // |V| = 0 corner clamps to 1.
        assert_eq!(convergence_score(5, 0, true), 1.0);
        // All candidates remain: literal formula gives 1/|C|, not 0.
        assert_eq!(convergence_score(4, 4, true), 0.25);
    }

    #[test]
    fn score_strictly_decreases_in_yes_count() {
        for c in 1..=21 {
            let mut prev = convergence_score(c, 1, true);
            for v in 2..=c {
                let s = convergence_score(c, v, true);
                assert!(s < prev, "c={c} v={v}: {s} !< {prev}");
                prev = s;
            }
        }
    }

    #[test]
    fn score_agrees_with_oracle() {
        for c in 1..=21 {
            for v in 0..=c {
                for related in [false, true] {
                    assert_eq!(convergence_score(c, v, related), eq1_oracle(c, v, related));
                }
            }
        }
    }

    #[test]
    fn parses_numbered_list_and_dedups() {
        let set =
            CandidateSet::from_model_output("1. Paris\n2. paris\n3. Lyon", &gold("Paris"), true)
                .unwrap();
        assert_eq!(set.as_slice(), ["Paris", "Lyon"]);
    }

    #[test]
    fn appends_gold_when_absent() {
        let set = CandidateSet::from_model_output("1. Paris\n2. Lyon", &gold("Marseille"), true)
            .unwrap();
        assert_eq!(set.as_slice(), ["Paris", "Lyon", "Marseille"]);
    }

    #[test]
    fn alias_match_counts_as_gold() {
        let g = GoldAnswer {
            text: "United States".to_string(),
            aliases: vec!["USA".to_string()],
        };
        let set = CandidateSet::from_model_output("1. usa.\n2. Canada", &g, true).unwrap();
        assert_eq!(set.as_slice(), ["usa", "Canada"]);
    }

    #[test]
    fn caps_at_twenty_in_input_order() {
        let raw: String = (1..=25).map(|i| format!("{i}. candidate {i}\n")).collect();
        let set = CandidateSet::from_model_output(&raw, &gold("candidate 1"), true).unwrap();
        assert_eq!(set.len(), 20);
        assert_eq!(set.as_slice()[0], "candidate 1");
        assert_eq!(set.as_slice()[19], "candidate 20");
    }

    #[test]
    fn empty_output_falls_back_to_gold() {
        let set = CandidateSet::from_model_output("", &gold("China"), true).unwrap();
        assert_eq!(set.as_slice(), ["China"]);
        assert_eq!(
            CandidateSet::from_model_output("", &gold("China"), false),
            Err(ConvergenceError::EmptyCandidates)
        );
    }

    #[test]
    fn bullets_and_bare_lines_parse() {
        let set = CandidateSet::from_model_output(
            "- Berlin,\n* Hamburg.\nMunich!\n12) Cologne",
            &gold("Berlin"),
            true,
        )
        .unwrap();
        assert_eq!(set.as_slice(), ["Berlin", "Hamburg", "Munich", "Cologne"]);
    }

    #[test]
    fn judgment_prefix_rule() {
        assert_eq!(parse_judgment("Yes, it applies."), Judgment::Yes);
        assert_eq!(parse_judgment("no"), Judgment::No);
        assert_eq!(parse_judgment("Maybe"), Judgment::No);
        assert_eq!(parse_judgment("  **Yes**"), Judgment::Yes);
        assert_eq!(parse_judgment("YES."), Judgment::Yes);
        assert_eq!(parse_judgment("123"), Judgment::No);
        assert_eq!(parse_judgment(""), Judgment::No);
        // "yesterday" starts with "yes" but is not the token "yes".
        assert_eq!(parse_judgment("yesterday"), Judgment::No);
    }

    #[test]
    fn record_counts_yes_judgments() {
        let set = CandidateSet::from_model_output(
            "1. China\n2. India\n3. Russia\n4. Brazil",
            &gold("China"),
            true,
        )
        .unwrap();
        let judgments = vec![Judgment::Yes, Judgment::No, Judgment::Yes, Judgment::No];
        let rec = ConvergenceRecord::from_judgments("q1".into(), 0, set, judgments, true).unwrap();
        assert_eq!(rec.score, 1.0 - 1.0 / 4.0);
        assert!(rec.related);
    }

    #[test]
    fn record_rejects_mismatched_judgments() {
        let set = CandidateSet::from_model_output("1. A\n2. B", &gold("A"), true).unwrap();
        let err = ConvergenceRecord::from_judgments("q".into(), 0, set, vec![Judgment::Yes], true)
            .unwrap_err();
        assert_eq!(
            err,
            ConvergenceError::JudgmentMismatch {
                candidates: 2,
                judgments: 1
            }
        );
    }

    #[test]
    fn default_prompts_validate_and_share_gold_render() {
        let prompts = CandidatePrompts::default();
        prompts.validate().unwrap();
        let judged = prompts.render_judgment("Q?", "H.", "China");
        let related = prompts.render_relatedness("Q?", "H.", "China");
        assert_eq!(judged, related);
    }

    #[test]
    fn placeholder_count_enforced() {
        let prompts = CandidatePrompts {
            judgment: "Hint: {hint} {hint}, candidate {candidate}, q {question}".into(),
            ..CandidatePrompts::default()
        };
        let err = prompts.validate().unwrap_err();
        assert_eq!(err.placeholder, "{hint}");
        assert_eq!(err.found, 2);
    }
}
