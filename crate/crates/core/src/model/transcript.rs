use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DebateConfig, SpeakerOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    DebaterA,
    DebaterB,
    Moderator,
}

impl Agent {
    pub const DEBATERS: [Agent; 2] = [Agent::DebaterA, Agent::DebaterB];

    pub fn is_debater(&self) -> bool {
        !matches!(self, Agent::Moderator)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DebaterA => "debater_a",
            Self::DebaterB => "debater_b",
            Self::Moderator => "moderator",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::DebaterA => "Debater A",
            Self::DebaterB => "Debater B",
            Self::Moderator => "Moderator",
        }
    }

    pub fn opponent(&self) -> Option<Agent> {
        match self {
            Self::DebaterA => Some(Self::DebaterB),
            Self::DebaterB => Some(Self::DebaterA),
            Self::Moderator => None,
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    OpeningStance,
    Argument,
    Moderation,
    RoundStance,
    ClosingStance,
}

impl TurnKind {
    pub fn is_stance(&self) -> bool {
        matches!(self, Self::OpeningStance | Self::RoundStance | Self::ClosingStance)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::OpeningStance => "opening_stance",
            Self::Argument => "argument",
            Self::Moderation => "moderation",
            Self::RoundStance => "round_stance",
            Self::ClosingStance => "closing_stance",
        }
    }
}

impl fmt::Display for TurnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding must have at least one component")]
    Empty,
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
}

/// Dense embedding attached to a stance or argument text.
///
/// Always non-empty with finite components. Serialized as a bare number array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// A debater's psychometric self-report for one argument turn.
///
/// When `parse_ok` is false the four scores are all `None` and `raw_text`
/// holds the last unparseable reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfReport {
    pub confidence: Option<f64>,
    pub effort: Option<u8>,
    pub empathy: Option<f64>,
    pub dissonance: Option<f64>,
    pub raw_text: String,
    pub parse_ok: bool,
    /// Set when any reported value had to be clamped into range.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

impl SelfReport {
    pub fn parsed(
        confidence: f64,
        effort: u8,
        empathy: f64,
        dissonance: f64,
        raw_text: impl Into<String>,
        clamped: bool,
    ) -> Self {
        Self {
            confidence: Some(confidence),
            effort: Some(effort),
            empathy: Some(empathy),
            dissonance: Some(dissonance),
            raw_text: raw_text.into(),
            parse_ok: true,
            clamped,
        }
    }

    pub fn unparsed(raw_text: impl Into<String>) -> Self {
        Self {
            confidence: None,
            effort: None,
            empathy: None,
            dissonance: None,
            raw_text: raw_text.into(),
            parse_ok: false,
            clamped: false,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let unit = |v: Option<f64>| v.is_some_and(|x| (0.0..=1.0).contains(&x));
        if self.parse_ok {
            if !unit(self.confidence) || !unit(self.empathy) || !unit(self.dissonance) {
                return Err("self-report scores must be in [0,1]".into());
            }
            if !self.effort.is_some_and(|e| (1..=5).contains(&e)) {
                return Err("self-report effort must be in 1..=5".into());
            }
        } else if self.confidence.is_some()
            || self.effort.is_some()
            || self.empathy.is_some()
            || self.dissonance.is_some()
        {
            return Err("unparsed self-report must not carry scores".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub agent: Agent,
    /// 0 is the opening phase; closing stances carry the final round number.
    pub round: u32,
    pub kind: TurnKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_report: Option<SelfReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<u8>,
    /// Warnings raised while labelling this turn (clamped provider values).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Fields written by newer tool versions; kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl TurnRecord {
    pub fn new(agent: Agent, round: u32, kind: TurnKind, text: impl Into<String>) -> Self {
        Self {
            agent,
            round,
            kind,
            text: text.into(),
            embedding: None,
            self_report: None,
            sentiment: None,
            bias: None,
            flags: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    /// Kind-specific field rules.
    pub fn check(&self) -> Result<(), String> {
        let is_mod = self.agent == Agent::Moderator;
        if is_mod != (self.kind == TurnKind::Moderation) {
            return Err(format!("{} cannot produce a {} turn", self.agent, self.kind));
        }
        if is_mod && self.self_report.is_some() {
            return Err("moderator turns never carry a self-report".into());
        }
        if self.self_report.is_some() && self.kind != TurnKind::Argument {
            return Err("self-reports attach only to argument turns".into());
        }
        if let Some(report) = &self.self_report {
            report.check()?;
        }
        if (self.kind.is_stance() || self.kind == TurnKind::Argument) && self.embedding.is_none() {
            return Err(format!("{} turn is missing its embedding", self.kind));
        }
        let labelled = self.sentiment.is_some() || self.bias.is_some();
        if labelled && !(self.kind.is_stance() || self.kind == TurnKind::Argument) {
            return Err("sentiment and bias attach only to argument and stance turns".into());
        }
        if let Some(s) = self.sentiment {
            if !(0.0..=1.0).contains(&s) {
                return Err("sentiment must be in [0,1]".into());
            }
        }
        if let Some(b) = self.bias {
            if b > 1 {
                return Err("bias label must be 0 or 1".into());
            }
        }
        if self.kind == TurnKind::OpeningStance && self.round != 0 {
            return Err("opening stances belong to round 0".into());
        }
        if self.kind != TurnKind::OpeningStance && self.round == 0 {
            return Err(format!("{} turns need a round ≥ 1", self.kind));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebateStatus {
    Complete,
    Aborted,
}

/// One position in the debate protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolSlot {
    pub agent: Agent,
    pub round: u32,
    pub kind: TurnKind,
}

/// Turn count of a complete debate with `rounds` rounds.
pub fn expected_turn_count(rounds: u32) -> usize {
    4 + 5 * rounds as usize
}

/// Debaters arguing in round `round`, in speaking order.
pub(crate) fn argument_order(order: SpeakerOrder, round: u32) -> [Agent; 2] {
    match order {
        SpeakerOrder::Alternate if round.is_multiple_of(2) => [Agent::DebaterB, Agent::DebaterA],
        _ => [Agent::DebaterA, Agent::DebaterB],
    }
}

/// The full protocol sequence: openings, then per round two arguments, the
/// moderator and two round stances, then two closing stances.
pub fn protocol_slots(rounds: u32, order: SpeakerOrder) -> Vec<ProtocolSlot> {
    let slot = |agent, round, kind| ProtocolSlot { agent, round, kind };
    let mut out = Vec::with_capacity(expected_turn_count(rounds));
    for agent in Agent::DEBATERS {
        out.push(slot(agent, 0, TurnKind::OpeningStance));
    }
    for round in 1..=rounds {
        for agent in argument_order(order, round) {
            out.push(slot(agent, round, TurnKind::Argument));
        }
        out.push(slot(Agent::Moderator, round, TurnKind::Moderation));
        for agent in Agent::DEBATERS {
            out.push(slot(agent, round, TurnKind::RoundStance));
        }
    }
    for agent in Agent::DEBATERS {
        out.push(slot(agent, rounds, TurnKind::ClosingStance));
    }
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("turn {index}: {message}")]
pub struct ProtocolViolation {
    /// Zero-based turn index; equals the turn count when turns are missing.
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebateTranscript {
    pub config: DebateConfig,
    pub turns: Vec<TurnRecord>,
    pub status: DebateStatus,
    pub created_at: DateTime<Utc>,
    pub abort_reason: Option<String>,
    /// Unknown header fields, preserved across load and save.
    pub header_extra: BTreeMap<String, Value>,
}

impl DebateTranscript {
    pub fn is_complete(&self) -> bool {
        self.status == DebateStatus::Complete
    }

    /// Verifies turn order against the protocol plus every per-turn rule.
    /// Aborted transcripts must be a strict prefix of the protocol.
    pub fn check_protocol(&self) -> Result<(), ProtocolViolation> {
        let slots = protocol_slots(self.config.rounds, self.config.speaker_order);
        for (index, turn) in self.turns.iter().enumerate() {
            let Some(slot) = slots.get(index) else {
                return Err(ProtocolViolation {
                    index,
                    message: format!("unexpected extra turn; protocol has {} turns", slots.len()),
                });
            };
            if (turn.agent, turn.round, turn.kind) != (slot.agent, slot.round, slot.kind) {
                return Err(ProtocolViolation {
                    index,
                    message: format!(
                        "expected {} {} round {}, found {} {} round {}",
                        slot.agent, slot.kind, slot.round, turn.agent, turn.kind, turn.round
                    ),
                });
            }
            turn.check().map_err(|message| ProtocolViolation { index, message })?;
        }
        if let Some(dim) = self.turns.iter().find_map(|t| t.embedding.as_ref().map(|e| e.dim())) {
            if let Some(index) = self
                .turns
                .iter()
                .position(|t| t.embedding.as_ref().is_some_and(|e| e.dim() != dim))
            {
                return Err(ProtocolViolation {
                    index,
                    message: format!("embedding dimension differs from {dim}"),
                });
            }
        }
        match self.status {
            DebateStatus::Complete if self.turns.len() != slots.len() => Err(ProtocolViolation {
                index: self.turns.len(),
                message: format!(
                    "complete debate needs {} turns, found {}",
                    slots.len(),
                    self.turns.len()
                ),
            }),
            DebateStatus::Aborted if self.turns.len() >= slots.len() => Err(ProtocolViolation {
                index: self.turns.len(),
                message: "aborted debate holds every protocol turn".into(),
            }),
            _ => Ok(()),
        }
    }

    fn find(&self, agent: Agent, round: u32, kind: TurnKind) -> Option<&TurnRecord> {
        self.turns
            .iter()
            .find(|t| t.agent == agent && t.round == round && t.kind == kind)
    }

    /// Stance of `agent` at the end of `round`; round 0 is the opening stance.
    pub fn stance(&self, agent: Agent, round: u32) -> Option<&TurnRecord> {
        if round == 0 {
            self.find(agent, 0, TurnKind::OpeningStance)
        } else {
            self.find(agent, round, TurnKind::RoundStance)
        }
    }

    pub fn closing_stance(&self, agent: Agent) -> Option<&TurnRecord> {
        self.turns
            .iter()
            .find(|t| t.agent == agent && t.kind == TurnKind::ClosingStance)
    }

    /// Debater argument turns of one round, in speaking order.
    pub fn arguments(&self, round: u32) -> impl Iterator<Item = &TurnRecord> {
        self.turns
            .iter()
            .filter(move |t| t.round == round && t.kind == TurnKind::Argument && t.agent.is_debater())
    }
}
