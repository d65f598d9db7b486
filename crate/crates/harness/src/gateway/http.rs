//! OpenAI-compatible HTTP provider: `/v1/chat/completions` and
//! `/v1/embeddings`, with bounded retries and exponential backoff.

use std::time::Duration;

use serde::Deserialize;

use super::{GatewayError, Provider, ProviderReply};
use convqa_core::chat::{ChatRequest, FinishReason};

/// Retry budget: `attempts` tries total, sleeping `base_delay * 2^i`
/// between them. Retries fire on transport errors and HTTP 429/5xx only.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

pub struct HttpProvider {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpProvider {
    pub fn new(base_url: &str, api_key: &str) -> HttpProvider {
        HttpProvider::with_retry(base_url, api_key, RetryPolicy::default())
    }

    pub fn with_retry(base_url: &str, api_key: &str, retry: RetryPolicy) -> HttpProvider {
        HttpProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("client builds"),
            retry,
        }
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, GatewayError> {
        let url = format!("{}{path}", self.base_url);
        let mut last_err: Option<GatewayError> = None;
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            let sent = self
                .client
                .post(&url)
                .header("content-type", "application/json")
                .header("authorization", format!("Bearer {}", self.api_key))
                .json(body)
                .send();
            match sent {
                Ok(response) => {
                    let status = response.status();
                    let text = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
                    if status.is_success() {
                        return Ok(text);
                    }
                    let err = GatewayError::Provider {
                        status: status.as_u16(),
                        body: text,
                    };
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_err = Some(err);
                        continue;
                    }
                    return Err(err);
                }
                Err(e) => {
                    last_err = Some(GatewayError::Transport(e.to_string()));
                    continue;
                }
            }
        }
        Err(last_err.unwrap_or_else(|| GatewayError::Transport("no attempts made".into())))
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl Provider for HttpProvider {
    fn chat(&self, req: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let text = self.post("/v1/chat/completions", &serde_json::to_value(req).expect("serializes"))?;
        let parsed: ChatCompletion = serde_json::from_str(&text)
            .map_err(|e| GatewayError::BadResponse(format!("chat completion: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::BadResponse("empty `choices`".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") | None => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Other,
        };
        Ok(ProviderReply {
            content: choice.message.content,
            finish_reason,
        })
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = serde_json::json!({ "model": model, "input": texts });
        let text = self.post("/v1/embeddings", &body)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::BadResponse(format!("embeddings: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(GatewayError::BadResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut data = parsed.data;
        // Providers usually echo an index; respect it when present.
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index.unwrap());
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn base_url(&self) -> &str {
        &self.base_url
    }
}
