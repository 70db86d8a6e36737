use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatMessage, ChatRequest, ModelBackend, ProviderError, Slot};

/// How sentiment scores are obtained.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SentimentEndpoint {
    /// Ask the sentiment model through the chat route for a number in [0,1].
    #[default]
    Chat,
    /// A text-classification endpoint returning `[{label, score}, ...]`.
    Classifier { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// OpenAI-compatible base, e.g. `https://router.huggingface.co/v1`.
    pub base_url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_secs: f64,
    #[serde(default)]
    pub verbose: bool,
    #[serde(default)]
    pub sentiment: SentimentEndpoint,
    /// Instruction used when sentiment goes through the chat route.
    #[serde(default = "default_sentiment_instruction")]
    pub sentiment_instruction: String,
}

fn default_sentiment_instruction() -> String {
    "Rate the emotional valence of the user's text from 0.0 (very negative) to 1.0 (very positive). \
     Reply with the number only."
        .to_string()
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: "HF_TOKEN".into(),
            timeout_secs: 120.0,
            max_retries: 2,
            backoff_base_secs: 1.0,
            verbose: false,
            sentiment: SentimentEndpoint::Chat,
            sentiment_instruction: default_sentiment_instruction(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err("timeout must be > 0".into());
        }
        if !(self.backoff_base_secs >= 0.0 && self.backoff_base_secs.is_finite()) {
            return Err("backoff base must be ≥ 0".into());
        }
        Ok(())
    }
}

/// OpenAI-style chat/embedding client with retry on transient failures.
pub struct HttpBackend {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

enum Failure {
    Transient(String),
    Fatal(ProviderError),
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable, if set.
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate().map_err(ProviderError::InvalidRequest)?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent, api_key })
    }

    fn redact(&self, s: &str) -> String {
        match &self.api_key {
            Some(key) => s.replace(key.as_str(), "***"),
            None => s.to_string(),
        }
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Err(Failure::Transient(self.redact(&e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(format!("reading body: {e}")))?;
        if self.cfg.verbose {
            tracing::debug!(target: "debatelab::http", url, status, body = %self.redact(&text), "response");
        }
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Failure::Fatal(ProviderError::Protocol(format!("invalid JSON body: {e}")))),
            429 | 500..=599 => Err(Failure::Transient(format!("HTTP {status}"))),
            _ => Err(Failure::Fatal(ProviderError::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {}", truncate(&self.redact(&text), 200)),
            })),
        }
    }

    /// POSTs JSON, retrying transport failures, 429 and 5xx with exponential backoff.
    fn post_json(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        if self.cfg.verbose {
            tracing::debug!(target: "debatelab::http", url, body = %self.redact(&body.to_string()), "request");
        }
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(url, body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(ProviderError::Transport { message, .. })) => {
                    return Err(ProviderError::Transport { attempts, message })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(message)) => {
                    if attempts > self.cfg.max_retries {
                        return Err(ProviderError::Transport { attempts, message });
                    }
                    let delay = self.cfg.backoff_base_secs * 2f64.powi(attempts as i32 - 1);
                    tracing::warn!(url, attempts, delay, %message, "retrying");
                    thread::sleep(Duration::from_secs_f64(delay));
                }
            }
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// `choices[0].message.content` of a chat-completion body.
pub(crate) fn completion_text(body: &Value) -> Result<String, ProviderError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Protocol("response has no choices[0].message.content".into()))
}

/// `data[*].embedding`, reordered by `index` when present.
pub(crate) fn embedding_vectors(body: &Value) -> Result<Vec<Vec<f64>>, ProviderError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Protocol("response has no data array".into()))?;
    let mut rows = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
        let vector = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Protocol(format!("data[{pos}] has no embedding")))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ProviderError::Protocol(format!("data[{pos}] holds a non-number"))))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((index, vector));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

/// Collapses classifier labels to a valence in [0,1]: positive counts 1,
/// neutral 0.5, negative 0. `LABEL_0/1/2` follow negative/neutral/positive.
pub(crate) fn classifier_valence(body: &Value) -> Result<f64, ProviderError> {
    let list = match body {
        Value::Array(outer) if outer.first().is_some_and(Value::is_array) => outer[0].as_array(),
        Value::Array(_) => body.as_array(),
        _ => None,
    }
    .ok_or_else(|| ProviderError::Protocol("classifier response is not a label list".into()))?;
    let mut valence = 0.0;
    let mut mass = 0.0;
    for item in list {
        let label = item.get("label").and_then(Value::as_str).unwrap_or("").to_ascii_lowercase();
        let score = item
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| ProviderError::Protocol("label without score".into()))?;
        let weight = if label.contains("pos") || label == "label_2" {
            1.0
        } else if label.contains("neu") || label == "label_1" {
            0.5
        } else if label.contains("neg") || label == "label_0" {
            0.0
        } else {
            return Err(ProviderError::Protocol(format!("unknown sentiment label {label:?}")));
        };
        valence += weight * score;
        mass += score;
    }
    if mass <= 0.0 {
        return Err(ProviderError::Protocol("classifier returned no scores".into()));
    }
    Ok(valence / mass)
}

/// First decimal number in a reply.
pub(crate) fn first_number(reply: &str) -> Option<f64> {
    let bytes = reply.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() || (bytes[i] == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            return reply[start..i].trim_end_matches('.').parse().ok();
        }
        i += 1;
    }
    None
}

impl ModelBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = serde_json::to_value(request).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        completion_text(&self.post_json(&self.url("chat/completions"), &body)?)
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({ "model": model, "input": texts });
        embedding_vectors(&self.post_json(&self.url("embeddings"), &body)?)
    }

    fn sentiment(&self, model: &str, text: &str, _slot: Option<&Slot>) -> Result<f64, ProviderError> {
        match &self.cfg.sentiment {
            SentimentEndpoint::Classifier { url } => {
                classifier_valence(&self.post_json(url, &json!({ "inputs": text }))?)
            }
            SentimentEndpoint::Chat => {
                let request = ChatRequest {
                    model: model.to_string(),
                    messages: vec![
                        ChatMessage::system(self.cfg.sentiment_instruction.clone()),
                        ChatMessage::user(text),
                    ],
                    temperature: 0.0,
                    max_tokens: 8,
                    slot: None,
                };
                let reply = self.chat(&request)?;
                first_number(&reply)
                    .ok_or_else(|| ProviderError::Protocol(format!("no number in sentiment reply {reply:?}")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_text_requires_content() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(completion_text(&ok).unwrap(), "hi");
        let bad = json!({"choices": [{"message": {"role": "assistant"}}]});
        assert!(matches!(completion_text(&bad), Err(ProviderError::Protocol(_))));
    }

    #[test]
    fn embeddings_follow_index_field() {
        let body = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]});
        assert_eq!(embedding_vectors(&body).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn classifier_labels_normalize() {
        let body = json!([[{"label": "POSITIVE", "score": 0.8}, {"label": "NEGATIVE", "score": 0.2}]]);
        assert!((classifier_valence(&body).unwrap() - 0.8).abs() < 1e-12);
        let body = json!([{"label": "LABEL_1", "score": 1.0}]);
        assert_eq!(classifier_valence(&body).unwrap(), 0.5);
        assert!(classifier_valence(&json!([{"label": "joy", "score": 1.0}])).is_err());
    }

    #[test]
    fn first_number_scan() {
        assert_eq!(first_number("0.75"), Some(0.75));
        assert_eq!(first_number("Score: 1."), Some(1.0));
        assert_eq!(first_number("about -0.2 overall"), Some(-0.2));
        assert_eq!(first_number("none"), None);
    }
}
