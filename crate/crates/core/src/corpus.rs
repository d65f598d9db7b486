//! Dataset types: questions with gold answers and ordered hint lists.
//!
//! Hint indices `0..hints.len()` are the canonical addressing scheme used by
//! every downstream record (convergence rows, subsets, passages).

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::metrics::normalize;

/// Gold answer with optional aliases accepted as equally correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub text: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// One question with its ordered hint sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    pub answer: GoldAnswer,
    pub hints: Vec<String>,
}

/// A loaded dataset. Question order is preserved from the source.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub questions: Vec<Question>,
    pub source_path: String,
}

/// Why a single record is invalid.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("missing or empty `id`")]
    EmptyId,
    #[error("missing or empty `question`")]
    EmptyQuestion,
    #[error("answer text is empty or whitespace-only")]
    EmptyAnswer,
    #[error("`hints` array is empty")]
    NoHints,
    #[error("hint {0} is empty or whitespace-only")]
    EmptyHint(usize),
    #[error("aliases `{0}` and `{1}` are duplicates after normalization")]
    DuplicateAlias(String, String),
}

impl Question {
    /// Check the record invariants. Hints are compared trimmed; alias
    /// duplicates are detected under [`normalize`].
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.trim().is_empty() {
            return Err(RecordError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(RecordError::EmptyQuestion);
        }
        if self.answer.text.trim().is_empty() {
            return Err(RecordError::EmptyAnswer);
        }
        if self.hints.is_empty() {
            return Err(RecordError::NoHints);
        }
        for (i, hint) in self.hints.iter().enumerate() {
            if hint.trim().is_empty() {
                return Err(RecordError::EmptyHint(i));
            }
        }
        let mut seen: Vec<(String, &String)> = Vec::new();
        for alias in &self.answer.aliases {
            let norm = normalize(alias);
            if let Some((_, prev)) = seen.iter().find(|(n, _)| *n == norm) {
                return Err(RecordError::DuplicateAlias((*prev).clone(), alias.clone()));
            }
            seen.push((norm, alias));
        }
        Ok(())
    }

    /// Trim surrounding whitespace from text fields in place. Applied at
    /// load time so hint bytes and passage bytes agree.
    pub fn trim_fields(&mut self) {
        self.id = self.id.trim().to_string();
        self.text = self.text.trim().to_string();
        self.answer.text = self.answer.text.trim().to_string();
        for hint in &mut self.hints {
            *hint = hint.trim().to_string();
        }
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn question() -> Question {
        Question {
            id: "q1".into(),
            text: "Which country borders 14 others?".into(),
            answer: GoldAnswer {
                text: "China".into(),
                aliases: vec!["PRC".into()],
            },
            hints: vec!["Its capital is Beijing.".into()],
        }
    }

    #[test]
    fn valid_record_passes() {
        assert_eq!(question().validate(), Ok(()));
    }

    #[test]
    fn empty_hints_rejected() {
        let mut q = question();
        q.hints.clear();
        assert_eq!(q.validate(), Err(RecordError::NoHints));
        let mut q = question();
        q.hints = vec!["  ".into()];
        assert_eq!(q.validate(), Err(RecordError::EmptyHint(0)));
    }

    #[test]
    fn duplicate_aliases_after_normalization_rejected() {
        let mut q = question();
        q.answer.aliases = vec!["Obama".into(), "obama.".into()];
        assert_eq!(
            q.validate(),
            Err(RecordError::DuplicateAlias("Obama".into(), "obama.".into()))
        );
    }

    #[test]
    fn whitespace_answer_rejected() {
        let mut q = question();
        q.answer.text = " \t".into();
        assert_eq!(q.validate(), Err(RecordError::EmptyAnswer));
    }
}
