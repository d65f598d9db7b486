//! Uniform access to chat-completion and embedding providers, with a
//! persistent content-addressed response cache and bounded parallelism.
//!
//! A [`Gateway`] wraps any [`Provider`] (HTTP, scripted, or the test
//! world). Responses are cached by the digest of the canonicalized request,
//! so a warm run performs zero provider calls and replays byte-identical
//! content.

mod cache;
mod http;
mod scripted;

use std::sync::{Arc, Condvar, Mutex};

pub use cache::{canonical_json, Cache, CacheKey};
pub use http::{HttpProvider, RetryPolicy};
pub use scripted::{hash_embedding, CallCount, Counted, Matcher, ScriptedProvider};

use convqa_core::chat::{ChatRequest, ChatResponse, FinishReason};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error after retries: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("cache entry {key} is corrupt: {reason}")]
    CacheCorrupt { key: String, reason: String },
    #[error("cache io at `{path}`: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no script rule matches request:\n{rendered}")]
    ScriptMiss { rendered: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Raw reply from a provider, before caching metadata is attached.
#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub content: String,
    pub finish_reason: FinishReason,
}

/// Backend transport. Implementations must be safe to call concurrently.
pub trait Provider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ProviderReply, GatewayError>;

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;

    /// Identity mixed into cache keys so entries from different endpoints
    /// never collide.
    fn base_url(&self) -> &str;
}

struct Limiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Limiter {
        Limiter {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.permits.lock().unwrap() += 1;
        self.limiter.cv.notify_one();
    }
}

/// Cached, concurrency-limited front door to a provider.
pub struct Gateway {
    provider: Arc<dyn Provider>,
    cache: Option<Cache>,
    limiter: Limiter,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, cache: Option<Cache>, concurrency: usize) -> Gateway {
        Gateway {
            provider,
            cache,
            limiter: Limiter::new(concurrency),
        }
    }

    /// Chat completion with read-through caching.
    ///
    /// Concurrent misses on one key may both compute, but exactly one
    /// persisted result wins and every caller returns its bytes.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if !req.valid_message_order() {
            return Err(GatewayError::InvalidRequest(
                "messages must be non-empty with any system message first".into(),
            ));
        }
        let key = CacheKey::for_chat(self.provider.base_url(), req);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.read(&key)? {
                let reply = reply_from_value(&key, &entry)?;
                return Ok(ChatResponse {
                    content: reply.content,
                    finish_reason: reply.finish_reason,
                    from_cache: true,
                });
            }
        }
        let reply = {
            let _permit = self.limiter.acquire();
            self.provider.chat(req)?
        };
        let reply = match &self.cache {
            Some(cache) => {
                let request_value = serde_json::to_value(req).expect("request serializes");
                let response_value = serde_json::json!({
                    "content": reply.content,
                    "finish_reason": reply.finish_reason,
                });
                let winner = cache.write_once(&key, &request_value, &response_value)?;
                reply_from_value(&key, &winner)?
            }
            None => reply,
        };
        Ok(ChatResponse {
            content: reply.content,
            finish_reason: reply.finish_reason,
            from_cache: false,
        })
    }

    /// Embed a batch of texts, cached per (text, model). Only cache misses
    /// reach the provider, batched into a single call.
    pub fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        if texts.iter().any(|t| t.is_empty()) {
            return Err(GatewayError::InvalidRequest(
                "cannot embed an empty string".into(),
            ));
        }
        let keys: Vec<CacheKey> = texts
            .iter()
            .map(|t| CacheKey::for_embedding(self.provider.base_url(), model, t))
            .collect();

        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut miss_indices: Vec<usize> = Vec::new();
        if let Some(cache) = &self.cache {
            for (i, key) in keys.iter().enumerate() {
                match cache.read(key)? {
                    Some(entry) => out[i] = Some(embedding_from_value(key, &entry)?),
                    None => miss_indices.push(i),
                }
            }
        } else {
            miss_indices = (0..texts.len()).collect();
        }

        if !miss_indices.is_empty() {
            // Embed each distinct missing text once.
            let mut distinct: Vec<usize> = Vec::new();
            for &i in &miss_indices {
                if !distinct.iter().any(|&j| texts[j] == texts[i]) {
                    distinct.push(i);
                }
            }
            let batch: Vec<String> = distinct.iter().map(|&i| texts[i].clone()).collect();
            let vectors = {
                let _permit = self.limiter.acquire();
                self.provider.embed(model, &batch)?
            };
            if vectors.len() != batch.len() {
                return Err(GatewayError::BadResponse(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            for (&i, vector) in distinct.iter().zip(&vectors) {
                let stored = match &self.cache {
                    Some(cache) => {
                        let request_value = serde_json::json!({
                            "endpoint": "embeddings",
                            "model": model,
                            "input": [texts[i]],
                        });
                        let response_value = serde_json::json!({ "embedding": vector });
                        let winner = cache.write_once(&keys[i], &request_value, &response_value)?;
                        embedding_from_value(&keys[i], &winner)?
                    }
                    None => vector.clone(),
                };
                out[i] = Some(stored);
            }
            // Duplicate texts within the batch reuse the distinct result.
            for &i in &miss_indices {
                if out[i].is_none() {
                    let j = distinct
                        .iter()
                        .copied()
                        .find(|&j| texts[j] == texts[i])
                        .expect("distinct representative exists");
                    out[i] = out[j].clone();
                }
            }
        }

        let vectors: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled")).collect();
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(GatewayError::BadResponse(
                "embedding dimensions differ within one model".into(),
            ));
        }
        Ok(vectors)
    }

    pub fn provider(&self) -> &Arc<dyn Provider> {
        &self.provider
    }
}

fn reply_from_value(key: &CacheKey, value: &serde_json::Value) -> Result<ProviderReply, GatewayError> {
    let content = value
        .get("content")
        .and_then(|v| v.as_str())
        .ok_or_else(|| GatewayError::CacheCorrupt {
            key: key.hex().to_string(),
            reason: "missing `content`".into(),
        })?;
    let finish_reason: FinishReason = value
        .get("finish_reason")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| GatewayError::CacheCorrupt {
            key: key.hex().to_string(),
            reason: format!("bad `finish_reason`: {e}"),
        })?
        .unwrap_or(FinishReason::Stop);
    Ok(ProviderReply {
        content: content.to_string(),
        finish_reason,
    })
}

fn embedding_from_value(key: &CacheKey, value: &serde_json::Value) -> Result<Vec<f64>, GatewayError> {
    value
        .get("embedding")
        .and_then(|v| v.as_array())
        .map(|arr| arr.iter().filter_map(|x| x.as_f64()).collect::<Vec<f64>>())
        .filter(|v: &Vec<f64>| !v.is_empty())
        .ok_or_else(|| GatewayError::CacheCorrupt {
            key: key.hex().to_string(),
            reason: "missing `embedding`".into(),
        })
}
