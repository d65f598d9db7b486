//! Hint-subset enumeration, scoring, High/Low group selection, sentence
//! ordering, and passage assembly.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Question;

/// Default subset sizes.
pub const DEFAULT_SIZES: [usize; 3] = [3, 4, 5];

/// Default number of subsets per group.
pub const DEFAULT_GROUP_SIZE: usize = 10;

/// Sentence-selection method behind a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Convergence,
    #[serde(rename = "cosine")]
    CosineSimilarity,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Convergence => f.write_str("Convergence"),
            Method::CosineSimilarity => f.write_str("Cosine Similarity"),
        }
    }
}

/// High-score or Low-score group membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    High,
    Low,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::High => f.write_str("High-score"),
            Group::Low => f.write_str("Low-score"),
        }
    }
}

/// Presentation order of a subset's sentences. `Canonical` keeps the
/// dataset hint order; the other two sort by per-hint convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Canonical,
    Descending,
    Ascending,
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ordering::Canonical => f.write_str("Canonical"),
            Ordering::Descending => f.write_str("Descending"),
            Ordering::Ascending => f.write_str("Ascending"),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SubsetError {
    #[error("no subset sizes given")]
    EmptySizes,
    #[error("question has {n_hints} hints but subsets of size {needed} were requested")]
    InsufficientHints { n_hints: usize, needed: usize },
    #[error("no score available for hint index {0}")]
    MissingScore(usize),
    #[error("{have} scored subsets are too few to select 2 groups of {group_size}")]
    TooFewSubsets { have: usize, group_size: usize },
}

/// All index combinations of each requested size, each tuple sorted
/// ascending, the list ordered by (size, lexicographic tuple).
pub fn enumerate_subsets(n_hints: usize, sizes: &[usize]) -> Result<Vec<Vec<usize>>, SubsetError> {
    if sizes.is_empty() {
        return Err(SubsetError::EmptySizes);
    }
    let mut sizes: Vec<usize> = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if let Some(&max) = sizes.last() {
        if max > n_hints {
            return Err(SubsetError::InsufficientHints {
                n_hints,
                needed: max,
            });
        }
    }
    let mut out = Vec::new();
    for &k in &sizes {
        if k == 0 {
            continue;
        }
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            if !next_combination(&mut idx, n_hints) {
                break;
            }
        }
    }
    Ok(out)
}

/// Advance `idx` to the next k-combination of `0..n` in lexicographic
/// order; returns false when exhausted.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Number of subsets `enumerate_subsets` yields, `Σ C(n, s)` over sizes.
pub fn subset_count(n_hints: usize, sizes: &[usize]) -> usize {
    let mut sizes: Vec<usize> = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .iter()
        .filter(|&&k| k <= n_hints && k > 0)
        .map(|&k| binomial(n_hints, k))
        .sum()
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Smallest hint count for which the requested sizes yield at least
/// `2 * group_size` subsets (the minimum for disjoint High/Low groups).
pub fn min_hints_for_groups(sizes: &[usize], group_size: usize) -> usize {
    let floor = sizes.iter().copied().max().unwrap_or(1);
    let mut n = floor;
    while subset_count(n, sizes) < 2 * group_size {
        n += 1;
    }
    n
}

/// A hint subset with its average convergence and cosine scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSubset {
    pub question_id: String,
    pub hint_indices: Vec<usize>,
    pub conv_avg: f64,
    pub cos_avg: f64,
}

/// Average the per-hint convergence scores and question-cosine values over
/// each subset's members.
pub fn score_subsets(
    question_id: &str,
    subsets: &[Vec<usize>],
    conv: &[f64],
    cos: &[f64],
) -> Result<Vec<ScoredSubset>, SubsetError> {
    subsets
        .iter()
        .map(|indices| {
            for &i in indices {
                if i >= conv.len() || i >= cos.len() {
                    return Err(SubsetError::MissingScore(i));
                }
            }
            let n = indices.len() as f64;
            Ok(ScoredSubset {
                question_id: question_id.to_string(),
                hint_indices: indices.clone(),
                conv_avg: indices.iter().map(|&i| conv[i]).sum::<f64>() / n,
                cos_avg: indices.iter().map(|&i| cos[i]).sum::<f64>() / n,
            })
        })
        .collect()
}

/// The ten (by default) highest- and lowest-keyed subsets for a question
/// under one selection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub method: Method,
    pub high: Vec<ScoredSubset>,
    pub low: Vec<ScoredSubset>,
}

impl ScoredSubset {
    pub fn key(&self, method: Method) -> f64 {
        match method {
            Method::Convergence => self.conv_avg,
            Method::CosineSimilarity => self.cos_avg,
        }
    }
}

/// Select the Low-score group (k lowest keys) and High-score group
/// (k highest keys). Ties break by (size, lexicographic indices)
/// ascending, so the selection is a total order and fully reproducible.
pub fn select_groups(
    scored: &[ScoredSubset],
    method: Method,
    group_size: usize,
) -> Result<GroupSelection, SubsetError> {
    if scored.len() < 2 * group_size {
        return Err(SubsetError::TooFewSubsets {
            have: scored.len(),
            group_size,
        });
    }
    let mut sorted: Vec<&ScoredSubset> = scored.iter().collect();
    sorted.sort_by(|a, b| {
        a.key(method)
            .total_cmp(&b.key(method))
            .then_with(|| a.hint_indices.len().cmp(&b.hint_indices.len()))
            .then_with(|| a.hint_indices.cmp(&b.hint_indices))
    });
    let low = sorted[..group_size].iter().map(|s| (*s).clone()).collect();
    let high = sorted[sorted.len() - group_size..]
        .iter()
        .map(|s| (*s).clone())
        .collect();
    Ok(GroupSelection { method, high, low })
}

/// Permute a subset's hint indices for presentation.
///
/// `Descending` puts the highest per-hint convergence first, `Ascending`
/// the lowest; `Canonical` keeps dataset order. Ties break by ascending
/// hint index.
pub fn order_subset(hint_indices: &[usize], per_hint_scores: &[f64], ordering: Ordering) -> Vec<usize> {
    let mut indices = hint_indices.to_vec();
    indices.sort_unstable();
    match ordering {
        Ordering::Canonical => {}
        Ordering::Ascending => {
            indices.sort_by(|&a, &b| per_hint_scores[a].total_cmp(&per_hint_scores[b]));
        }
        Ordering::Descending => {
            indices.sort_by(|&a, &b| per_hint_scores[b].total_cmp(&per_hint_scores[a]));
        }
    }
    indices
}

/// One passage ready for the answering model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageInstance {
    pub question_id: String,
    pub method: Method,
    pub group: Group,
    pub ordering: Ordering,
    pub hint_indices: Vec<usize>,
    pub conv_avg: f64,
    pub cos_avg: f64,
    pub text: String,
}

/// Join the selected hints, in presentation order, into the passage text
/// (one sentence per line, no surrounding whitespace).
///
/// Panics if the permutation contains an out-of-range or repeated index.
pub fn passage_text(question: &Question, permutation: &[usize]) -> String {
    for (i, &a) in permutation.iter().enumerate() {
        assert!(a < question.hints.len(), "hint index {a} out of range");
        assert!(
            !permutation[..i].contains(&a),
            "hint index {a} repeated in permutation"
        );
    }
    let lines: Vec<&str> = permutation
        .iter()
        .map(|&i| question.hints[i].trim())
        .collect();
    lines.join("\n").trim().to_string()
}

/// Assemble the full passage instance for one (subset, ordering) pair.
pub fn assemble_passage(
    question: &Question,
    subset: &ScoredSubset,
    per_hint_scores: &[f64],
    method: Method,
    group: Group,
    ordering: Ordering,
) -> PassageInstance {
    let permutation = order_subset(&subset.hint_indices, per_hint_scores, ordering);
    let text = passage_text(question, &permutation);
    PassageInstance {
        question_id: question.id.clone(),
        method,
        group,
        ordering,
        hint_indices: permutation,
        conv_avg: subset.conv_avg,
        cos_avg: subset.cos_avg,
        text,
    }
}
