//! Domain types shared by orchestration, metrics and persistence.
//!
//! Everything here is plain data: constructed once, then shared read-only
//! across debate workers.

mod metrics;
pub(crate) mod transcript;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use metrics::{
    AggregateReport, DebateMetrics, DebateRow, GroupBy, GroupSummary, HistogramBin, LeveneRow,
    PsychometricMeans, RoundMetrics,
};
pub use transcript::{
    expected_turn_count, protocol_slots, Agent, DebateStatus, DebateTranscript, EmbeddingError,
    EmbeddingVector, ProtocolSlot, ProtocolViolation, SelfReport, TurnKind, TurnRecord,
};

/// Sampling temperature used when none is given.
pub const DEFAULT_TEMPERATURE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contentiousness {
    Contentious,
    LessContentious,
    #[default]
    Unlabeled,
}

impl Contentiousness {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Contentious => "contentious",
            Self::LessContentious => "less_contentious",
            Self::Unlabeled => "unlabeled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub contentiousness: Contentiousness,
}

#[derive(Debug, thiserror::Error)]
#[error("topic file line {line}: {message}")]
pub struct TopicError {
    pub line: usize,
    pub message: String,
}

impl Topic {
    /// Parses a topic file: one JSON object per line, blank lines ignored.
    /// Ids must be unique and texts non-empty after trimming.
    pub fn parse_jsonl(input: &str) -> Result<Vec<Topic>, TopicError> {
        let mut topics = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in input.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let topic: Topic = serde_json::from_str(raw).map_err(|e| TopicError {
                line,
                message: e.to_string(),
            })?;
            if topic.id.trim().is_empty() {
                return Err(TopicError { line, message: "topic id must be non-empty".into() });
            }
            if topic.text.trim().is_empty() {
                return Err(TopicError { line, message: "topic text must be non-empty".into() });
            }
            if !seen.insert(topic.id.clone()) {
                return Err(TopicError { line, message: format!("duplicate topic id {:?}", topic.id) });
            }
            topics.push(topic);
        }
        Ok(topics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Incentive {
    Truth,
    Persuasion,
}

impl Incentive {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Truth => "truth",
            Self::Persuasion => "persuasion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub name: String,
    pub system_prompt: String,
    pub incentive: Incentive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeratorStyle {
    Neutral,
    ConsensusBuilder,
}

impl ModeratorStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Neutral => "neutral",
            Self::ConsensusBuilder => "consensus_builder",
        }
    }
}

impl fmt::Display for ModeratorStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeratorStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "neutral" => Ok(Self::Neutral),
            "consensus_builder" | "consensus" => Ok(Self::ConsensusBuilder),
            other => Err(format!("unknown moderator style {other:?} (expected neutral or consensus_builder)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorSpec {
    pub style: ModeratorStyle,
    /// System message sent with every moderator request.
    pub system_prompt: String,
}

/// The five remote model roles a debate needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Debater,
    Moderator,
    Embedding,
    Sentiment,
    Bias,
}

impl ModelRole {
    pub const ALL: [ModelRole; 5] = [
        ModelRole::Debater,
        ModelRole::Moderator,
        ModelRole::Embedding,
        ModelRole::Sentiment,
        ModelRole::Bias,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Debater => "debater",
            Self::Moderator => "moderator",
            Self::Embedding => "embedding",
            Self::Sentiment => "sentiment",
            Self::Bias => "bias",
        }
    }
}

/// Which text represents a debater's per-round stance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StanceSource {
    /// A dedicated "state your current position" request after moderation.
    #[default]
    Elicited,
    /// Reuse the round's argument text.
    Argument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerOrder {
    /// Debater A argues first every round.
    #[default]
    AFirst,
    /// A first in odd rounds, B first in even rounds.
    Alternate,
}

/// Full recipe for one debate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateConfig {
    pub topic: Topic,
    pub debater_a: PersonaSpec,
    pub debater_b: PersonaSpec,
    pub moderator: ModeratorSpec,
    pub rounds: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_ids: BTreeMap<ModelRole, String>,
    /// Only consulted by the mock provider.
    pub seed: u64,
    #[serde(default)]
    pub stance_source: StanceSource,
    #[serde(default)]
    pub speaker_order: SpeakerOrder,
}

impl DebateConfig {
    pub fn persona(&self, agent: Agent) -> Option<&PersonaSpec> {
        match agent {
            Agent::DebaterA => Some(&self.debater_a),
            Agent::DebaterB => Some(&self.debater_b),
            Agent::Moderator => None,
        }
    }

    pub fn model(&self, role: ModelRole) -> &str {
        self.model_ids.get(&role).map(String::as_str).unwrap_or("")
    }
}

/// Checks every config invariant; returns one message per violation.
pub fn validate_config(config: &DebateConfig) -> Vec<String> {
    let mut out = Vec::new();
    if config.topic.id.trim().is_empty() {
        out.push("topic id must be non-empty".to_string());
    }
    if config.topic.text.trim().is_empty() {
        out.push("topic text must be non-empty".to_string());
    }
    for (label, persona) in [("debater_a", &config.debater_a), ("debater_b", &config.debater_b)] {
        if persona.name.trim().is_empty() {
            out.push(format!("{label} name must be non-empty"));
        }
        if persona.system_prompt.trim().is_empty() {
            out.push(format!("{label} system_prompt must be non-empty"));
        }
    }
    if config.moderator.system_prompt.trim().is_empty() {
        out.push("moderator system_prompt must be non-empty".to_string());
    }
    if config.rounds < 1 {
        out.push("rounds must be ≥ 1".to_string());
    }
    if !(0.0..=2.0).contains(&config.temperature) {
        out.push("temperature must be in [0, 2]".to_string());
    }
    if config.max_tokens == 0 {
        out.push("max_tokens must be positive".to_string());
    }
    for role in ModelRole::ALL {
        if config.model(role).trim().is_empty() {
            out.push(format!("missing model id for {}", role.as_str()));
        }
    }
    out
}

#[cfg(test)]
pub(crate) use tests::sample_config;

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_config(rounds: u32) -> DebateConfig {
        DebateConfig {
            topic: Topic {
                id: "t1".into(),
                text: "The TSA should be abolished".into(),
                source: "cmv".into(),
                contentiousness: Contentiousness::Unlabeled,
            },
            debater_a: PersonaSpec {
                name: "evidence-driven analyst".into(),
                system_prompt: "You reason from evidence.".into(),
                incentive: Incentive::Truth,
            },
            debater_b: PersonaSpec {
                name: "values-focused ethicist".into(),
                system_prompt: "You reason from values.".into(),
                incentive: Incentive::Persuasion,
            },
            moderator: ModeratorSpec {
                style: ModeratorStyle::Neutral,
                system_prompt: "You moderate.".into(),
            },
            rounds,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 512,
            model_ids: ModelRole::ALL.iter().map(|r| (*r, format!("{}-model", r.as_str()))).collect(),
            seed: 7,
            stance_source: StanceSource::Elicited,
            speaker_order: SpeakerOrder::AFirst,
        }
    }

    #[test]
    fn valid_config_has_no_violations() {
        assert!(validate_config(&sample_config(3)).is_empty());
    }

    #[test]
    fn zero_rounds_is_reported() {
        assert_eq!(validate_config(&sample_config(0)), vec!["rounds must be ≥ 1".to_string()]);
    }

    #[test]
    fn temperature_and_missing_bias_model_are_two_violations() {
        let mut cfg = sample_config(3);
        cfg.temperature = 2.5;
        cfg.model_ids.remove(&ModelRole::Bias);
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v.iter().any(|m| m.contains("temperature")));
        assert!(v.iter().any(|m| m.contains("bias")));
    }

    #[test]
    fn nan_temperature_is_rejected() {
        let mut cfg = sample_config(3);
        cfg.temperature = f64::NAN;
        assert_eq!(validate_config(&cfg).len(), 1);
    }

    #[test]
    fn topic_file_defaults_contentiousness() {
        let input = "{\"id\":\"a\",\"text\":\"x\",\"source\":\"cmv\"}\n\n{\"id\":\"b\",\"text\":\"y\",\"source\":\"cmv\",\"contentiousness\":\"contentious\"}\n";
        let topics = Topic::parse_jsonl(input).unwrap();
        assert_eq!(topics.len(), 2);
        assert_eq!(topics[0].contentiousness, Contentiousness::Unlabeled);
        assert_eq!(topics[1].contentiousness, Contentiousness::Contentious);
    }

    #[test]
    fn topic_file_rejects_blank_text_and_duplicates() {
        let err = Topic::parse_jsonl("{\"id\":\"a\",\"text\":\"   \"}").unwrap_err();
        assert_eq!(err.line, 1);
        let err = Topic::parse_jsonl("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("duplicate"));
    }

    #[test]
    fn moderator_style_parses_aliases() {
        assert_eq!("consensus-builder".parse::<ModeratorStyle>().unwrap(), ModeratorStyle::ConsensusBuilder);
        assert_eq!("Neutral".parse::<ModeratorStyle>().unwrap(), ModeratorStyle::Neutral);
        assert!("loud".parse::<ModeratorStyle>().is_err());
    }
}

