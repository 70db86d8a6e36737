use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatRole, ModelBackend, ProviderError, Purpose, Slot};
use crate::model::{Agent, TurnKind};

const DEFAULT_DIM: usize = 64;

/// Scripted reply for one protocol slot. `topic: None` applies to every topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    pub agent: Agent,
    pub round: u32,
    pub kind: TurnKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<u8>,
    /// Raw self-report replies, one per attempt; the last one repeats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_report: Option<Vec<String>>,
}

/// Where to inject a transport failure. Unset fields match anything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailurePoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<Agent>,
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TurnKind>,
}

impl FailurePoint {
    fn matches(&self, slot: &Slot) -> bool {
        let Purpose::Turn(kind) = slot.purpose else { return false };
        self.round == slot.round
            && self.topic.as_ref().is_none_or(|t| *t == slot.topic_id)
            && self.agent.is_none_or(|a| a == slot.agent)
            && self.kind.is_none_or(|k| k == kind)
    }
}

/// A deterministic stand-in for every remote model role.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScenario {
    #[serde(default)]
    pub seed: u64,
    /// Dimension of fallback embeddings; defaults to the scripted dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    /// Synthesize text for unscripted turns instead of failing.
    #[serde(default)]
    pub generate_unscripted: bool,
    #[serde(default)]
    pub turns: Vec<ScriptedTurn>,
    /// Text → vector.
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
    /// Text → sentiment score.
    #[serde(default)]
    pub sentiment: BTreeMap<String, f64>,
    /// Text → bias label.
    #[serde(default)]
    pub bias: BTreeMap<String, u8>,
    #[serde(default)]
    pub failures: Vec<FailurePoint>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl MockScenario {
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let scenario: Self = serde_json::from_str(&text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Scripted vectors must share one dimension, be finite and nonzero, and
    /// scripted labels must be in range.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let mut dim = self.embedding_dim;
        if dim == Some(0) {
            return invalid("embedding_dim must be positive".into());
        }
        let vectors = self
            .turns
            .iter()
            .filter_map(|t| t.embedding.as_ref().map(|v| (t.text.as_str(), v)))
            .chain(self.embeddings.iter().map(|(k, v)| (k.as_str(), v)));
        let mut by_text: HashMap<&str, &Vec<f64>> = HashMap::new();
        for (text, v) in vectors {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) || v.iter().all(|x| *x == 0.0) {
                return invalid(format!("vector for {text:?} must be finite and nonzero"));
            }
            match dim {
                Some(d) if d != v.len() => {
                    return invalid(format!("vector for {text:?} has dim {}, expected {d}", v.len()))
                }
                _ => dim = Some(v.len()),
            }
            if let Some(prev) = by_text.insert(text, v) {
                if prev != v {
                    return invalid(format!("text {text:?} is scripted with two different vectors"));
                }
            }
        }
        for t in &self.turns {
            if t.text.trim().is_empty() {
                return invalid(format!("empty text for {} {} round {}", t.agent, t.kind, t.round));
            }
            if t.bias.is_some_and(|b| b > 1) || self.bias.values().any(|b| *b > 1) {
                return invalid("bias labels must be 0 or 1".into());
            }
            if t.sentiment.is_some_and(f64::is_nan) {
                return invalid("sentiment must be a number".into());
            }
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        self.embedding_dim
            .or_else(|| self.turns.iter().find_map(|t| t.embedding.as_ref().map(Vec::len)))
            .or_else(|| self.embeddings.values().next().map(Vec::len))
            .unwrap_or(DEFAULT_DIM)
    }
}

type TurnKey = (Option<String>, Agent, u32, TurnKind);

/// Serves a [`MockScenario`]. Never touches the network.
pub struct MockBackend {
    scenario: MockScenario,
    dim: usize,
    turns: HashMap<TurnKey, ScriptedTurn>,
    vectors: HashMap<String, Vec<f64>>,
}

impl MockBackend {
    pub fn new(scenario: MockScenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let dim = scenario.dim();
        let mut turns = HashMap::new();
        let mut vectors: HashMap<String, Vec<f64>> = scenario.embeddings.clone().into_iter().collect();
        for t in &scenario.turns {
            if let Some(v) = &t.embedding {
                vectors.insert(t.text.clone(), v.clone());
            }
            turns.insert((t.topic.clone(), t.agent, t.round, t.kind), t.clone());
        }
        Ok(Self { scenario, dim, turns, vectors })
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        Self::new(MockScenario::from_file(path)?)
    }

    pub fn scenario(&self) -> &MockScenario {
        &self.scenario
    }

    fn scripted(&self, slot: &Slot, kind: TurnKind) -> Option<&ScriptedTurn> {
        let key = |topic: Option<String>| (topic, slot.agent, slot.round, kind);
        self.turns
            .get(&key(Some(slot.topic_id.clone())))
            .or_else(|| self.turns.get(&key(None)))
    }

    fn digest(&self, slot: &Slot, tag: &str) -> [u8; 32] {
        Sha256::new()
            .chain_update(self.scenario.seed.to_le_bytes())
            .chain_update(slot.seed.to_le_bytes())
            .chain_update(slot.topic_id.as_bytes())
            .chain_update([0])
            .chain_update(slot.agent.as_str().as_bytes())
            .chain_update(slot.round.to_le_bytes())
            .chain_update(tag.as_bytes())
            .finalize()
            .into()
    }

    fn turn_text(&self, slot: &Slot, kind: TurnKind) -> Result<String, ProviderError> {
        if let Some(t) = self.scripted(slot, kind) {
            return Ok(t.text.clone());
        }
        if !self.scenario.generate_unscripted {
            return Err(ProviderError::ScenarioHole(slot.to_string()));
        }
        let h = self.digest(slot, kind.as_str());
        Ok(format!(
            "{} {} on {} in round {} [{}]",
            slot.agent.label(),
            kind.as_str().replace('_', " "),
            slot.topic_id,
            slot.round,
            hex::encode(&h[..6])
        ))
    }

    fn self_report(&self, slot: &Slot) -> String {
        if let Some(replies) = self
            .scripted(slot, TurnKind::Argument)
            .and_then(|t| t.self_report.as_ref())
            .filter(|r| !r.is_empty())
        {
            let i = (slot.attempt as usize).min(replies.len() - 1);
            return replies[i].clone();
        }
        let h = self.digest(slot, "self_report");
        let milli = |i: usize| (u16::from_le_bytes([h[i], h[i + 1]]) % 1001) as f64 / 1000.0;
        format!(
            r#"{{"confidence": {}, "effort": {}, "empathy": {}, "dissonance": {}}}"#,
            milli(0),
            1 + h[2] % 5,
            milli(4),
            milli(6)
        )
    }

    /// The text under classification is the last user message.
    fn classified_text(request: &ChatRequest) -> &str {
        request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    fn bias_label(&self, slot: &Slot, text: &str) -> u8 {
        self.scripted(slot, TurnKind::Argument)
            .filter(|t| t.text == text)
            .and_then(|t| t.bias)
            .or_else(|| self.scenario.bias.get(text).copied())
            .unwrap_or_else(|| text_digest(self.scenario.seed, "bias", text)[0] & 1)
    }

    fn unslotted(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if !self.scenario.generate_unscripted {
            return Err(ProviderError::ScenarioHole("request without a protocol slot".into()));
        }
        let joined: String = request.messages.iter().map(|m| m.content.as_str()).collect();
        Ok(format!("reply {}", hex::encode(&text_digest(self.scenario.seed, "chat", &joined)[..6])))
    }
}

fn text_digest(seed: u64, tag: &str, text: &str) -> [u8; 32] {
    Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(tag.as_bytes())
        .chain_update([0])
        .chain_update(text.as_bytes())
        .finalize()
        .into()
}

/// Unit vector derived from a hash of the text: each 8-byte chunk of
/// SHA-256(seed, dim, block, text) becomes a coordinate uniform in [-1, 1).
pub(crate) fn fallback_embedding(seed: u64, dim: usize, text: &str) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut block: u64 = 0;
    while out.len() < dim {
        let h: [u8; 32] = Sha256::new()
            .chain_update(seed.to_le_bytes())
            .chain_update((dim as u64).to_le_bytes())
            .chain_update(block.to_le_bytes())
            .chain_update(text.as_bytes())
            .finalize()
            .into();
        for chunk in h.chunks_exact(8) {
            if out.len() == dim {
                break;
            }
            let x = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            out.push((x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
        }
        block += 1;
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        out[0] = 1.0;
        return out;
    }
    out.iter().map(|x| x / norm).collect()
}

impl ModelBackend for MockBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let Some(slot) = &request.slot else {
            return self.unslotted(request);
        };
        if slot.attempt == 0 && self.scenario.failures.iter().any(|f| f.matches(slot)) {
            return Err(ProviderError::Transport {
                attempts: 1,
                message: format!("injected failure at {slot}"),
            });
        }
        match slot.purpose {
            Purpose::Turn(kind) => self.turn_text(slot, kind),
            Purpose::SelfReport => Ok(self.self_report(slot)),
            Purpose::BiasLabel => Ok(self.bias_label(slot, Self::classified_text(request)).to_string()),
            Purpose::Sentiment => Ok(self.sentiment("", Self::classified_text(request), Some(slot))?.to_string()),
        }
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| match self.vectors.get(t) {
                Some(v) => v.clone(),
                None => fallback_embedding(self.scenario.seed, self.dim, t),
            })
            .collect())
    }

    fn sentiment(&self, _model: &str, text: &str, slot: Option<&Slot>) -> Result<f64, ProviderError> {
        let scripted = slot
            .and_then(|s| self.scripted(s, TurnKind::Argument))
            .filter(|t| t.text == text)
            .and_then(|t| t.sentiment);
        Ok(scripted
            .or_else(|| self.scenario.sentiment.get(text).copied())
            .unwrap_or_else(|| {
                let h = text_digest(self.scenario.seed, "sentiment", text);
                (u16::from_le_bytes([h[0], h[1]]) % 1001) as f64 / 1000.0
            }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{ChatMessage, Gateway};
    use std::sync::Arc;

    fn slot(purpose: Purpose, round: u32) -> Slot {
        Slot { topic_id: "t1".into(), seed: 3, agent: Agent::DebaterA, round, purpose, attempt: 0 }
    }

    fn request(slot: Slot, user: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(user)],
            temperature: 0.3,
            max_tokens: 64,
            slot: Some(slot),
        }
    }

    fn scripted_turn(round: u32, text: &str) -> ScriptedTurn {
        ScriptedTurn {
            topic: None,
            agent: Agent::DebaterA,
            round,
            kind: TurnKind::Argument,
            text: text.into(),
            embedding: None,
            sentiment: Some(0.9),
            bias: Some(1),
            self_report: Some(vec!["I feel confident".into(), r#"{"confidence":0.8}"#.into()]),
        }
    }

    #[test]
    fn scripted_slots_are_served() {
        let backend = MockBackend::new(MockScenario {
            turns: vec![scripted_turn(1, "argue")],
            ..Default::default()
        })
        .unwrap();
        let arg = slot(Purpose::Turn(TurnKind::Argument), 1);
        assert_eq!(backend.chat(&request(arg, "go")).unwrap(), "argue");
        assert_eq!(backend.sentiment("m", "argue", Some(&slot(Purpose::Sentiment, 1))).unwrap(), 0.9);
        assert_eq!(backend.chat(&request(slot(Purpose::BiasLabel, 1), "argue")).unwrap(), "1");
        let mut sr = slot(Purpose::SelfReport, 1);
        assert_eq!(backend.chat(&request(sr.clone(), "x")).unwrap(), "I feel confident");
        sr.attempt = 5;
        assert_eq!(backend.chat(&request(sr, "x")).unwrap(), r#"{"confidence":0.8}"#);
    }

    #[test]
    fn unscripted_turn_is_a_hole_unless_generated() {
        let strict = MockBackend::new(MockScenario::default()).unwrap();
        let req = request(slot(Purpose::Turn(TurnKind::Argument), 2), "go");
        assert!(matches!(strict.chat(&req), Err(ProviderError::ScenarioHole(_))));
        let lenient =
            MockBackend::new(MockScenario { generate_unscripted: true, ..Default::default() }).unwrap();
        let a = lenient.chat(&req).unwrap();
        assert_eq!(a, lenient.chat(&req).unwrap());
        assert!(a.contains("round 2"));
    }

    #[test]
    fn failures_fire_on_first_attempt_only_for_matching_turns() {
        let backend = MockBackend::new(MockScenario {
            generate_unscripted: true,
            failures: vec![FailurePoint { round: 2, ..Default::default() }],
            ..Default::default()
        })
        .unwrap();
        let hit = request(slot(Purpose::Turn(TurnKind::Argument), 2), "go");
        assert!(matches!(backend.chat(&hit), Err(ProviderError::Transport { .. })));
        assert!(backend.chat(&request(slot(Purpose::Turn(TurnKind::Argument), 1), "go")).is_ok());
        assert!(backend.chat(&request(slot(Purpose::SelfReport, 2), "go")).is_ok());
    }

    #[test]
    fn fallback_embeddings_are_deterministic_unit_vectors() {
        let backend = MockBackend::new(MockScenario { seed: 11, ..Default::default() }).unwrap();
        let out = backend.embed("e", &["a".into(), "a".into(), "b".into()]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_ne!(out[0], out[2]);
        for v in &out {
            assert_eq!(v.len(), DEFAULT_DIM);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert_eq!(fallback_embedding(11, 5, "a"), fallback_embedding(11, 5, "a"));
        assert_ne!(fallback_embedding(11, 5, "a"), fallback_embedding(12, 5, "a"));
    }

    #[test]
    fn batch_of_64_matches_singleton_calls() {
        let gateway = Gateway::new(Arc::new(MockBackend::new(MockScenario::default()).unwrap()));
        let texts: Vec<String> = (0..64).map(|i| format!("text number {i}")).collect();
        let batch = gateway.embed("e", &texts).unwrap();
        assert_eq!(batch.len(), 64);
        for i in [0, 17, 63] {
            let single = gateway.embed("e", &texts[i..=i]).unwrap();
            assert_eq!(single[0], batch[i]);
        }
    }

    #[test]
    fn validation_rejects_ragged_scripted_vectors() {
        let mut a = scripted_turn(1, "a");
        a.embedding = Some(vec![1.0, 0.0]);
        let mut b = scripted_turn(2, "b");
        b.embedding = Some(vec![1.0, 0.0, 0.0]);
        let err = MockBackend::new(MockScenario { turns: vec![a, b], ..Default::default() });
        assert!(matches!(err, Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn scripted_dimension_drives_fallback() {
        let mut a = scripted_turn(1, "a");
        a.embedding = Some(vec![0.0, 2.0, 0.0]);
        let backend = MockBackend::new(MockScenario { turns: vec![a], ..Default::default() }).unwrap();
        let out = backend.embed("e", &["a".into(), "zzz".into()]).unwrap();
        assert_eq!(out[0], vec![0.0, 2.0, 0.0]);
        assert_eq!(out[1].len(), 3);
    }
}
