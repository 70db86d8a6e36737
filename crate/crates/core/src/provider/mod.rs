//! Clients for the four remote model roles: chat completion, embedding,
//! sentiment and bias.
//!
//! A [`ModelBackend`] moves bytes (HTTP or scripted mock); [`Gateway`] layers
//! the role contracts on top: request validation, dimension checks, clamping
//! and the bias-label parse.

mod http;
mod mock;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{Agent, EmbeddingVector, TurnKind};

pub use http::{HttpBackend, ProviderConfig, SentimentEndpoint};
pub use mock::{FailurePoint, MockBackend, MockScenario, ScenarioError, ScriptedTurn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

/// What a request is for. Used by the mock to look up scripted replies;
/// never sent over the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Turn(TurnKind),
    SelfReport,
    BiasLabel,
    Sentiment,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Purpose::Turn(kind) => write!(f, "{kind}"),
            Purpose::SelfReport => f.write_str("self_report"),
            Purpose::BiasLabel => f.write_str("bias_label"),
            Purpose::Sentiment => f.write_str("sentiment"),
        }
    }
}

/// Protocol position of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub topic_id: String,
    pub seed: u64,
    pub agent: Agent,
    pub round: u32,
    pub purpose: Purpose,
    /// 0 for the first ask, 1 for the corrective reprompt.
    pub attempt: u32,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} round {} {} (attempt {})",
            self.topic_id, self.agent, self.round, self.purpose, self.attempt
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip)]
    pub slot: Option<Slot>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.model.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("model id is empty".into()));
        }
        match self.messages.first() {
            None => Err(ProviderError::InvalidRequest("no messages".into())),
            Some(m) if m.role != ChatRole::System => {
                Err(ProviderError::InvalidRequest("first message must be the system prompt".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("embedding dimensions differ ({expected} vs {found})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("could not parse reply: {0}")]
    Parse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock scenario has no script for {0}")]
    ScenarioHole(String),
}

/// Raw transport to a model host.
pub trait ModelBackend: Send + Sync {
    /// Text of the first completion.
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    /// One raw vector per input, in input order.
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;

    /// Sentiment valence, nominally in `[0, 1]`; the gateway clamps.
    fn sentiment(&self, model: &str, text: &str, slot: Option<&Slot>) -> Result<f64, ProviderError>;
}

/// A value together with whether it had to be clamped into range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped<T> {
    pub value: T,
    pub clamped: bool,
}

/// Role-level operations over a shared backend. Cheap to clone.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").finish_non_exhaustive()
    }
}

/// Prompts for the chat-based bias classifier.
#[derive(Debug, Clone, Copy)]
pub struct BiasPrompt<'a> {
    pub instruction: &'a str,
    pub correction: &'a str,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self { backend }
    }

    pub fn chat_complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let text = self.backend.chat(request)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        Ok(text.to_string())
    }

    pub fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("nothing to embed".into()));
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ProviderError::InvalidRequest("cannot embed an empty text".into()));
        }
        let raw = self.backend.embed(model, texts)?;
        if raw.len() != texts.len() {
            return Err(ProviderError::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                raw.len()
            )));
        }
        let expected = raw[0].len();
        if let Some(v) = raw.iter().find(|v| v.len() != expected) {
            return Err(ProviderError::DimensionMismatch { expected, found: v.len() });
        }
        raw.into_iter()
            .map(|v| EmbeddingVector::new(v).map_err(|e| ProviderError::Protocol(e.to_string())))
            .collect()
    }

    /// Sentiment valence clamped to `[0, 1]`; NaN is a protocol error.
    pub fn classify_sentiment(
        &self,
        model: &str,
        text: &str,
        slot: Option<&Slot>,
    ) -> Result<Clamped<f64>, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("cannot classify an empty text".into()));
        }
        let raw = self.backend.sentiment(model, text, slot)?;
        if raw.is_nan() {
            return Err(ProviderError::Protocol("sentiment score is NaN".into()));
        }
        let value = raw.clamp(0.0, 1.0);
        if value != raw {
            tracing::warn!(raw, "sentiment score clamped into [0,1]");
        }
        Ok(Clamped { value, clamped: value != raw })
    }

    /// Binary bias label from a chat call. Reprompts once with the correction
    /// when the reply holds no `0`/`1` token.
    pub fn classify_bias(
        &self,
        model: &str,
        text: &str,
        prompt: BiasPrompt<'_>,
        slot: Option<Slot>,
    ) -> Result<u8, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("cannot classify an empty text".into()));
        }
        let mut request = ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::system(prompt.instruction), ChatMessage::user(text)],
            temperature: 0.0,
            max_tokens: 16,
            slot,
        };
        let first = self.backend.chat(&request)?;
        if let Some(label) = parse_bias_label(&first) {
            return Ok(label);
        }
        request.messages.push(ChatMessage::assistant(first.clone()));
        request.messages.push(ChatMessage::user(prompt.correction));
        if let Some(slot) = request.slot.as_mut() {
            slot.attempt += 1;
        }
        let second = self.backend.chat(&request)?;
        parse_bias_label(&second).ok_or_else(|| {
            ProviderError::Parse(format!("no 0/1 label in bias replies {first:?} and {second:?}"))
        })
    }
}

/// First standalone `0` or `1` token in a reply.
pub fn parse_bias_label(reply: &str) -> Option<u8> {
    reply
        .split(|c: char| !c.is_ascii_alphanumeric())
        .find_map(|tok| match tok {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        })
}

/// Where model calls go: a scripted mock or an HTTP host.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Mock(std::path::PathBuf),
    Http(String),
}

impl ProviderSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        if let Some(path) = s.strip_prefix("mock:") {
            if path.is_empty() {
                return Err("mock provider needs a scenario file: mock:<path>".into());
            }
            return Ok(Self::Mock(path.into()));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Self::Http(s.trim_end_matches('/').to_string()));
        }
        Err(format!("provider must be a base URL or mock:<scenario file>, got {s:?}"))
    }
}
