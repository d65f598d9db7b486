//! Few-shot QA prompting and answer extraction.
//!
//! The prompt is a fixed, versioned template: a system instruction, four
//! numbered answer conditions, a configurable number of worked examples,
//! then the target context and question. Builds are byte-stable so cached
//! responses and golden-prompt checks stay valid.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatMessage, ChatRequest};
use crate::metrics::NO_ANSWER;
use crate::subsets::{Group, Method, Ordering, PassageInstance};

/// Bump when any byte of the prompt template changes; cached responses are
/// keyed on the rendered prompt, so this is documentation more than wire.
pub const PROMPT_VERSION: &str = "qa-prompt/v1";

/// System instruction for the answering model.
pub const SYSTEM_PROMPT: &str = "You are an assistant that answers questions based on the \
provided context. You just answer questions with exact answers. You do not use sentences \
as the response.";

/// The four answer conditions that open the user message.
pub const CONDITIONS: &str = "Use the context to answer the question under conditions:\n\n\
1. Answer should not be sentences. It should be some words.\n\n\
2. Do not generate \"sorry\" or \"I cannot ...\" sentences; instead, use \"NO ANSWER\".\n\n\
3. Do not generate explanations, reasoning, or full sentences\u{2014}only provide the exact answer.\n\n\
4. If the answer cannot be guessed from the context, respond only with \"NO ANSWER\".";

/// Default number of worked examples in the prompt.
pub const DEFAULT_SHOT_COUNT: usize = 5;

/// One worked example: a context, a question, and the exact answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExemplar {
    pub context: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExemplarError {
    #[error("exemplar {0} has an empty field")]
    EmptyField(usize),
    #[error("exemplar {0} answer contains a newline")]
    MultilineAnswer(usize),
}

/// Check the exemplar invariants: all fields non-empty, single-line answers.
pub fn validate_shots(shots: &[FewShotExemplar]) -> Result<(), ExemplarError> {
    for (i, shot) in shots.iter().enumerate() {
        if shot.context.trim().is_empty()
            || shot.question.trim().is_empty()
            || shot.answer.trim().is_empty()
        {
            return Err(ExemplarError::EmptyField(i));
        }
        if shot.answer.contains('\n') {
            return Err(ExemplarError::MultilineAnswer(i));
        }
    }
    Ok(())
}

/// The exemplars shipped as defaults. These are harness configuration, not
/// dataset content; replace them via the shots file to change the prompt.
pub fn default_shots() -> Vec<FewShotExemplar> {
    let mk = |context: &str, question: &str, answer: &str| FewShotExemplar {
        context: context.to_string(),
        question: question.to_string(),
        answer: answer.to_string(),
    };
    alloc::vec![
        mk(
        "He was the 44th President of the United States. He served as President from 2009 \
         to 2017. He was the first African-American President of the United States. He was \
         a member of the Democratic Party. He was born on August 4, 1961 in Honolulu, Hawaii.",
        "Who won the Nobel Peace Prize in 2009?",
        "Barack Obama",
    ));
    shots.push(mk(
        "This river is the longest in South America. It discharges more water than the next \
         seven largest rivers combined. It flows through Brazil, Peru, and Colombia. Its \
         basin contains the largest rainforest on Earth.",
        "Which river carries the greatest volume of water in the world?",
        "Amazon River",
    ));
    shots.push(mk(
        "This composer was born in 1685. He worked as a church organist for much of his \
         career. He fathered twenty children. He died in Leipzig in 1750.",
        "Which opera did this composer premiere in 1740?",
        "NO ANSWER",
    ));
    shots.push(mk(
        "This metal has the chemical symbol Au. It has been used as currency for thousands \
         of years. It does not tarnish or corrode. Most of it ever mined is still in \
         circulation today.",
        "Which chemical element is traditionally used for wedding rings and bullion?",
        "Gold",
    ));
    shots.push(mk(
        "This city hosted the 1964 Summer Olympics. It anchors the most populous \
         metropolitan area in the world. Its rail network is famous for white-gloved \
         attendants. It was formerly known as Edo.",
        "Which capital city will you reach if you fly into Haneda Airport?",
        "Tokyo",
    ));
    shots
}

/// Decoding parameters for the answering model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            model: String::new(),
            temperature: 0.0,
            max_tokens: 64,
            seed: Some(0),
        }
    }
}

/// Render just the user-message text for a (passage, question) target.
pub fn render_user_prompt(passage_text: &str, question_text: &str, shots: &[FewShotExemplar]) -> String {
    let mut out = String::new();
    out.push_str(CONDITIONS);
    for (i, shot) in shots.iter().enumerate() {
        out.push_str("\n\n[Shot ");
        out.push_str(&(i + 1).to_string());
        out.push_str("]\n\nContext:\n");
        out.push_str(&shot.context);
        out.push_str("\n\nQuestion: ");
        out.push_str(&shot.question);
        out.push_str("\n\nAssistant: ");
        out.push_str(&shot.answer);
    }
    out.push_str("\n\nContext:\n");
    out.push_str(passage_text);
    out.push_str("\n\nQuestion: ");
    out.push_str(question_text);
    out
}

/// Build the full chat request for one passage. Byte-stable given identical
/// inputs.
pub fn build_prompt(
    passage_text: &str,
    question_text: &str,
    shots: &[FewShotExemplar],
    params: &ChatParams,
) -> ChatRequest {
    ChatRequest {
        model: params.model.clone(),
        messages: alloc::vec![
            ChatMessage::system(SYSTEM_PROMPT),
            ChatMessage::user(render_user_prompt(passage_text, question_text, shots)),
        ],
        temperature: params.temperature,
        max_tokens: params.max_tokens,
        seed: params.seed,
    }
}

/// Result of cleaning raw model output down to a short answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedAnswer {
    pub answer: String,
    pub abstained: bool,
    /// The model produced nothing usable; treated as an abstention, but
    /// callers may want to warn.
    pub empty_output: bool,
}

/// Extract a short answer or abstention from raw model output.
///
/// Takes the first non-empty line, strips surrounding quotes and trailing
/// periods, and maps the abstention token or refusal phrasings ("sorry",
/// "i cannot") to the canonical [`NO_ANSWER`].
pub fn extract_answer(raw: &str) -> ExtractedAnswer {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty());
    let mut answer = match line {
        Some(l) => l.to_string(),
        None => return abstention(true),
    };
    loop {
        let before = answer.len();
        answer = strip_surrounding_quotes(answer.trim());
        if answer.ends_with('.') {
            answer.pop();
        }
        answer = answer.trim().to_string();
        if answer.len() == before {
            break;
        }
    }
    if answer.is_empty() {
        return abstention(true);
    }
    let folded = answer.to_lowercase();
    if folded == "no answer" || folded.contains("sorry") || folded.contains("i cannot") {
        return abstention(false);
    }
    ExtractedAnswer {
        answer,
        abstained: false,
        empty_output: false,
    }
}

fn abstention(empty_output: bool) -> ExtractedAnswer {
    ExtractedAnswer {
        answer: NO_ANSWER.to_string(),
        abstained: true,
        empty_output,
    }
}

fn strip_surrounding_quotes(s: &str) -> String {
    let mut chars = s.chars();
    match (chars.next(), s.chars().next_back()) {
        (Some(first), Some(last))
            if s.chars().count() >= 2
                && ((first == '"' && last == '"') || (first == '\'' && last == '\'')) =>
        {
            let mut inner: String = s.chars().skip(1).collect();
            inner.pop();
            inner
        }
        _ => s.to_string(),
    }
}

/// One answered passage, ready for the prediction ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPrediction {
    pub question_id: String,
    pub method: Method,
    pub group: Group,
    pub ordering: Ordering,
    pub hint_indices: Vec<usize>,
    pub model: String,
    pub raw_output: String,
    pub answer: String,
    pub abstained: bool,
}

impl QAPrediction {
    pub fn from_raw(passage: &PassageInstance, model: impl Into<String>, raw_output: String) -> QAPrediction {
        let extracted = extract_answer(&raw_output);
        QAPrediction {
            question_id: passage.question_id.clone(),
            method: passage.method,
            group: passage.group,
            ordering: passage.ordering,
            hint_indices: passage.hint_indices.clone(),
            model: model.into(),
            raw_output,
            answer: extracted.answer,
            abstained: extracted.abstained,
        }
    }
}
