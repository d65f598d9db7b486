//! Build High-/Low-score passages per question from the score ledgers and
//! write the passage manifest.

use std::collections::BTreeMap;
use std::path::Path;

use convqa_core::corpus::{Corpus, Question};
use convqa_core::subsets::{
    assemble_passage, enumerate_subsets, min_hints_for_groups, score_subsets, select_groups,
    Group, GroupSelection, Method, Ordering, PassageInstance, SubsetError,
};

use crate::ledger::{read_ledger, LedgerError, LedgerWriter};

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub sizes: Vec<usize>,
    pub group_size: usize,
    pub methods: Vec<Method>,
    pub orderings: Vec<Ordering>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            sizes: convqa_core::subsets::DEFAULT_SIZES.to_vec(),
            group_size: convqa_core::subsets::DEFAULT_GROUP_SIZE,
            methods: vec![Method::Convergence, Method::CosineSimilarity],
            orderings: vec![Ordering::Canonical],
        }
    }
}

impl BuildOptions {
    /// Hints required before a question can fill two disjoint groups.
    pub fn min_hints(&self) -> usize {
        min_hints_for_groups(&self.sizes, self.group_size)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Subset(#[from] SubsetError),
    #[error("question `{0}` has no complete hint scores")]
    MissingScores(String),
}

/// A question left out of the manifest, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSkip {
    pub question_id: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub passages: Vec<PassageInstance>,
    pub skipped: Vec<BuildSkip>,
}

/// Group selections for one question under one method, then all passage
/// instances for the requested orderings.
fn passages_for_question(
    question: &Question,
    conv: &[f64],
    cos: &[f64],
    options: &BuildOptions,
) -> Result<Vec<PassageInstance>, SubsetError> {
    let subsets = enumerate_subsets(question.hints.len(), &options.sizes)?;
    let scored = score_subsets(&question.id, &subsets, conv, cos)?;
    let mut out = Vec::new();
    for &method in &options.methods {
        let GroupSelection { high, low, .. } = select_groups(&scored, method, options.group_size)?;
        for (group, members) in [(Group::High, &high), (Group::Low, &low)] {
            for &ordering in &options.orderings {
                for subset in members.iter() {
                    out.push(assemble_passage(question, subset, conv, method, group, ordering));
                }
            }
        }
    }
    Ok(out)
}

/// Build passages for every adequately-scored question, in corpus order.
/// Questions that cannot fill both groups are skipped with a reason.
pub fn build_passages(
    corpus: &Corpus,
    conv_by_question: &BTreeMap<String, Vec<f64>>,
    cos_by_question: &BTreeMap<String, Vec<f64>>,
    options: &BuildOptions,
) -> BuildOutcome {
    let mut outcome = BuildOutcome::default();
    for question in &corpus.questions {
        let (Some(conv), Some(cos)) = (
            conv_by_question.get(&question.id),
            cos_by_question.get(&question.id),
        ) else {
            outcome.skipped.push(BuildSkip {
                question_id: question.id.clone(),
                reason: "incomplete convergence or similarity scores".into(),
            });
            continue;
        };
        match passages_for_question(question, conv, cos, options) {
            Ok(mut passages) => outcome.passages.append(&mut passages),
            Err(e) => outcome.skipped.push(BuildSkip {
                question_id: question.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    outcome
}

/// Write the manifest JSONL (one passage per line, build order).
pub fn save_manifest(passages: &[PassageInstance], path: impl AsRef<Path>) -> Result<(), LedgerError> {
    let path = path.as_ref();
    if path.exists() {
        std::fs::remove_file(path).map_err(|source| LedgerError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let writer = LedgerWriter::append_to(path)?;
    for p in passages {
        writer.append(p)?;
    }
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PassageInstance>, LedgerError> {
    read_ledger(path)
}
