//! Deterministic scripted provider for offline runs and tests, plus a
//! seeded hash embedder.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{GatewayError, Provider, ProviderReply};
use convqa_core::chat::{ChatRequest, FinishReason};

/// Request matcher. First matching rule wins, in declaration order.
#[derive(Debug, Clone)]
pub enum Matcher {
    Substring(String),
    Exact(String),
    Any,
}

impl Matcher {
    fn matches(&self, rendered: &str) -> bool {
        match self {
            Matcher::Substring(needle) => rendered.contains(needle),
            Matcher::Exact(text) => rendered == text,
            Matcher::Any => true,
        }
    }
}

/// Provider whose chat/embed are pure functions of the request.
pub struct ScriptedProvider {
    base_url: String,
    chat_rules: Vec<(Matcher, String)>,
    embed_rules: Vec<(Matcher, Vec<f64>)>,
    hash_embeddings: Option<(usize, u64)>,
}

impl ScriptedProvider {
    pub fn new(name: &str) -> ScriptedProvider {
        ScriptedProvider {
            base_url: format!("scripted://{name}"),
            chat_rules: Vec::new(),
            embed_rules: Vec::new(),
            hash_embeddings: None,
        }
    }

    pub fn chat_rule(mut self, matcher: Matcher, response: impl Into<String>) -> Self {
        self.chat_rules.push((matcher, response.into()));
        self
    }

    pub fn chat_substring(self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.chat_rule(Matcher::Substring(needle.into()), response)
    }

    pub fn chat_any(self, response: impl Into<String>) -> Self {
        self.chat_rule(Matcher::Any, response)
    }

    pub fn embed_rule(mut self, matcher: Matcher, vector: Vec<f64>) -> Self {
        self.embed_rules.push((matcher, vector));
        self
    }

    /// Answer unmatched embedding requests with a seeded unit vector
    /// derived from the text.
    pub fn with_hash_embeddings(mut self, dim: usize, seed: u64) -> Self {
        self.hash_embeddings = Some((dim, seed));
        self
    }
}

impl Provider for ScriptedProvider {
    fn chat(&self, req: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let rendered = req.rendered_text();
        for (matcher, response) in &self.chat_rules {
            if matcher.matches(&rendered) {
                return Ok(ProviderReply {
                    content: response.clone(),
                    finish_reason: FinishReason::Stop,
                });
            }
        }
        Err(GatewayError::ScriptMiss { rendered })
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        texts
            .iter()
            .map(|text| {
                for (matcher, vector) in &self.embed_rules {
                    if matcher.matches(text) {
                        return Ok(vector.clone());
                    }
                }
                if let Some((dim, seed)) = self.hash_embeddings {
                    return Ok(hash_embedding(seed, dim, text));
                }
                Err(GatewayError::ScriptMiss {
                    rendered: text.clone(),
                })
            })
            .collect()
    }

    fn base_url(&self) -> &str {
        &self.base_url
    }
}

/// Deterministic pseudo-embedding: a unit vector drawn from a ChaCha stream
/// seeded by `sha256(seed || text)`. Stable across runs and platforms.
pub fn hash_embedding(seed: u64, dim: usize, text: &str) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    let mut v: Vec<f64> = (0..dim.max(1)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Shared call counters for asserting zero-network/warm-cache behavior.
#[derive(Debug, Clone, Default)]
pub struct CallCount {
    pub chat: Arc<AtomicUsize>,
    pub embed: Arc<AtomicUsize>,
}

impl CallCount {
    pub fn chat_calls(&self) -> usize {
        self.chat.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed.load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.chat_calls() + self.embed_calls()
    }
}

/// Wrap a provider and count the calls that actually reach it.
pub struct Counted<P> {
    inner: P,
    count: CallCount,
}

impl<P: Provider> Counted<P> {
    pub fn new(inner: P) -> (Counted<P>, CallCount) {
        let count = CallCount::default();
        (
            Counted {
                inner,
                count: count.clone(),
            },
            count,
        )
    }
}

impl<P: Provider> Provider for Counted<P> {
    fn chat(&self, req: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        self.count.chat.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(req)
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.count.embed.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(model, texts)
    }

    fn base_url(&self) -> &str {
        self.inner.base_url()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use convqa_core::chat::ChatMessage;

    fn request(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            max_tokens: 8,
            seed: None,
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let provider = ScriptedProvider::new("t")
            .chat_substring("Potential answers", "1. Paris\n2. Lyon")
            .chat_substring("answers", "should not fire")
            .chat_any("fallback");
        let reply = provider.chat(&request("Potential answers please")).unwrap();
        assert_eq!(reply.content, "1. Paris\n2. Lyon");
        let reply = provider.chat(&request("just answers")).unwrap();
        assert_eq!(reply.content, "should not fire");
        let reply = provider.chat(&request("something else")).unwrap();
        assert_eq!(reply.content, "fallback");
    }

    #[test]
    fn unmatched_request_is_script_miss_with_prompt() {
        let provider = ScriptedProvider::new("t").chat_substring("never", "x");
        match provider.chat(&request("full prompt text")).unwrap_err() {
            GatewayError::ScriptMiss { rendered } => {
                assert!(rendered.contains("full prompt text"))
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn hash_embeddings_are_unit_length_and_stable() {
        let a = hash_embedding(7, 16, "hello");
        let b = hash_embedding(7, 16, "hello");
        let c = hash_embedding(7, 16, "other");
        let d = hash_embedding(8, 16, "hello");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn counted_wrapper_tracks_calls() {
        let (provider, count) = Counted::new(
            ScriptedProvider::new("t")
                .chat_any("ok")
                .with_hash_embeddings(4, 0),
        );
        provider.chat(&request("x")).unwrap();
        provider.embed("e", &["a".into()]).unwrap();
        provider.embed("e", &["b".into()]).unwrap();
        assert_eq!(count.chat_calls(), 1);
        assert_eq!(count.embed_calls(), 2);
        assert_eq!(count.total(), 3);
    }
}
