//! Cosine similarity over sentence embeddings.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// An embedding with the model that produced it. Vectors from different
/// models are never comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_tag: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("embedding model tags differ: `{0}` vs `{1}`")]
    ModelMismatch(String, String),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite entry")]
    NonFinite,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_tag: impl Into<String>) -> Result<Self, SimilarityError> {
        if values.is_empty() {
            return Err(SimilarityError::ZeroVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite);
        }
        Ok(EmbeddingVector {
            values,
            model_tag: model_tag.into(),
        })
    }
}

/// Cosine similarity `dot(a,b) / (‖a‖·‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.model_tag != b.model_tag {
        return Err(SimilarityError::ModelMismatch(
            a.model_tag.clone(),
            b.model_tag.clone(),
        ));
    }
    if a.values.len() != b.values.len() {
        return Err(SimilarityError::DimensionMismatch(
            a.values.len(),
            b.values.len(),
        ));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let norm_a_sq: f64 = a.values.iter().map(|x| x * x).sum();
    let norm_b_sq: f64 = b.values.iter().map(|x| x * x).sum();
    if norm_a_sq == 0.0 || norm_b_sq == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / libm::sqrt(norm_a_sq * norm_b_sq)).clamp(-1.0, 1.0))
}
