//! The debate protocol as a sequential state machine over provider calls.
//!
//! Per debate: two opening stances; then for each round two arguments (each
//! labelled with embedding, sentiment, bias and a self-report), one moderator
//! message and two round stances; finally two closing stances.

use std::fmt::Write as _;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde_json::{Map, Value};

use crate::exec::{map_ordered, Execution};
use crate::model::transcript::argument_order;
use crate::model::{
    validate_config, Agent, DebateConfig, DebateStatus, DebateTranscript, EmbeddingVector, ModelRole,
    SelfReport, StanceSource, TurnKind, TurnRecord,
};
use crate::numfmt::round_sig;
use crate::provider::{BiasPrompt, ChatMessage, ChatRequest, Gateway, ProviderError, Purpose, Slot};
use crate::templates::{PromptTemplateSet, TemplateError};

/// Source of transcript timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    /// Every transcript gets this timestamp; used for byte-identical mock runs.
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// One entry of the history all agents see: openings, arguments and
/// moderator messages.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub agent: Agent,
    pub round: u32,
    pub kind: TurnKind,
    pub text: String,
}

pub fn format_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return "(nothing has been said yet)".to_string();
    }
    let mut out = String::new();
    for (i, e) in history.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        match e.kind {
            TurnKind::OpeningStance => write!(out, "{} (opening): {}", e.agent.label(), e.text),
            _ => write!(out, "{} (round {}): {}", e.agent.label(), e.round, e.text),
        }
        .expect("writing to a String");
    }
    out
}

/// Moderator request for `round`: the style's system prompt plus the whole
/// shared history, which ends with this round's arguments.
pub fn build_moderator_prompt(
    config: &DebateConfig,
    templates: &PromptTemplateSet,
    history: &[HistoryEntry],
    round: u32,
) -> Result<ChatRequest, TemplateError> {
    let user = templates.render(
        "moderator_turn",
        &[
            ("topic", &config.topic.text),
            ("history", &format_history(history)),
            ("round", &round.to_string()),
            ("rounds", &config.rounds.to_string()),
        ],
    )?;
    Ok(ChatRequest {
        model: config.model(ModelRole::Moderator).to_string(),
        messages: vec![ChatMessage::system(config.moderator.system_prompt.clone()), ChatMessage::user(user)],
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        slot: Some(Slot {
            topic_id: config.topic.id.clone(),
            seed: config.seed,
            agent: Agent::Moderator,
            round,
            purpose: Purpose::Turn(TurnKind::Moderation),
            attempt: 0,
        }),
    })
}

fn unit(map: &Map<String, Value>, key: &str, clamped: &mut bool) -> Option<f64> {
    let v = map.get(key)?.as_f64()?;
    let c = v.clamp(0.0, 1.0);
    *clamped |= c != v;
    Some(round_sig(c))
}

/// Parses a self-report reply. Accepts the JSON object anywhere in the text;
/// out-of-range values are clamped and flagged, effort is rounded to 1..=5.
pub fn parse_self_report(reply: &str) -> Option<SelfReport> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    let map: Map<String, Value> = serde_json::from_str(&reply[start..=end]).ok()?;
    let mut clamped = false;
    let confidence = unit(&map, "confidence", &mut clamped)?;
    let empathy = unit(&map, "empathy", &mut clamped)?;
    let dissonance = unit(&map, "dissonance", &mut clamped)?;
    let effort_raw = map.get("effort")?.as_f64()?.round();
    let effort = effort_raw.clamp(1.0, 5.0);
    clamped |= effort != effort_raw;
    Some(SelfReport::parsed(confidence, effort as u8, empathy, dissonance, reply, clamped))
}

#[derive(Debug)]
enum StepError {
    Provider { at: String, error: ProviderError },
    Template(TemplateError),
}

impl From<TemplateError> for StepError {
    fn from(e: TemplateError) -> Self {
        StepError::Template(e)
    }
}

impl std::fmt::Display for StepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepError::Provider { at, error } => write!(f, "{at}: {error}"),
            StepError::Template(e) => write!(f, "template error: {e}"),
        }
    }
}

/// Runs debates against a gateway using one template set.
#[derive(Debug, Clone)]
pub struct Orchestrator {
    gateway: Gateway,
    templates: Arc<PromptTemplateSet>,
    clock: Clock,
}

impl Orchestrator {
    pub fn new(gateway: Gateway, templates: Arc<PromptTemplateSet>) -> Self {
        Self { gateway, templates, clock: Clock::System }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn templates(&self) -> &PromptTemplateSet {
        &self.templates
    }

    /// Runs one debate. Provider failures end the debate early with status
    /// `aborted` and every turn recorded before the failure.
    pub fn run_debate(&self, config: &DebateConfig) -> DebateTranscript {
        let created_at = self.clock.now();
        let mut run = DebateRun { orch: self, config, turns: Vec::new(), history: Vec::new(), dim: None };
        let violations = validate_config(config);
        let outcome = if violations.is_empty() {
            run.execute()
        } else {
            Err(AbortReason(format!("invalid config: {}", violations.join("; "))))
        };
        let (status, abort_reason) = match outcome {
            Ok(()) => (DebateStatus::Complete, None),
            Err(AbortReason(reason)) => {
                tracing::warn!(topic = %config.topic.id, %reason, "debate aborted");
                (DebateStatus::Aborted, Some(reason))
            }
        };
        tracing::debug!(topic = %config.topic.id, turns = run.turns.len(), ?status, "debate finished");
        DebateTranscript {
            config: config.clone(),
            turns: run.turns,
            status,
            created_at,
            abort_reason,
            header_extra: Default::default(),
        }
    }

    /// One transcript per config, in input order, with at most `parallelism`
    /// debates in flight.
    pub fn run_experiment(&self, configs: &[DebateConfig], parallelism: usize) -> Vec<DebateTranscript> {
        map_ordered(configs, Execution::with_parallelism(parallelism), |c| self.run_debate(c))
    }

    /// Asks for the self-report on `argument`; one corrective reprompt on a
    /// parse failure, then degrades to an unparsed report.
    pub fn elicit_self_report(
        &self,
        model: &str,
        system_prompt: &str,
        argument: &str,
        mut slot: Slot,
    ) -> Result<SelfReport, ProviderError> {
        let ask = self
            .templates
            .render("self_report_elicitation", &[("argument", argument)])
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        slot.purpose = Purpose::SelfReport;
        slot.attempt = 0;
        let mut request = ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::system(system_prompt), ChatMessage::user(ask)],
            temperature: 0.0,
            max_tokens: 128,
            slot: Some(slot),
        };
        let first = self.reply_or_empty(&request)?;
        if let Some(report) = parse_self_report(&first) {
            return Ok(report);
        }
        let correction = self
            .templates
            .render("self_report_correction", &[])
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        request.messages.push(ChatMessage::assistant(first));
        request.messages.push(ChatMessage::user(correction));
        if let Some(s) = request.slot.as_mut() {
            s.attempt = 1;
        }
        let second = self.reply_or_empty(&request)?;
        Ok(parse_self_report(&second).unwrap_or_else(|| {
            tracing::warn!("self-report unparseable after reprompt");
            SelfReport::unparsed(second)
        }))
    }

    fn reply_or_empty(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        match self.gateway.chat_complete(request) {
            Err(ProviderError::EmptyCompletion) => Ok(String::new()),
            other => other,
        }
    }
}

struct AbortReason(String);

impl From<StepError> for AbortReason {
    fn from(e: StepError) -> Self {
        AbortReason(e.to_string())
    }
}

struct DebateRun<'a> {
    orch: &'a Orchestrator,
    config: &'a DebateConfig,
    turns: Vec<TurnRecord>,
    history: Vec<HistoryEntry>,
    dim: Option<usize>,
}

impl DebateRun<'_> {
    fn execute(&mut self) -> Result<(), AbortReason> {
        self.steps().map_err(AbortReason::from)
    }

    fn slot(&self, agent: Agent, round: u32, purpose: Purpose) -> Slot {
        Slot {
            topic_id: self.config.topic.id.clone(),
            seed: self.config.seed,
            agent,
            round,
            purpose,
            attempt: 0,
        }
    }

    fn provider<T>(&self, slot: &Slot, r: Result<T, ProviderError>) -> Result<T, StepError> {
        r.map_err(|error| StepError::Provider { at: slot.to_string(), error })
    }

    fn system_prompt(&self, agent: Agent) -> Result<String, StepError> {
        let persona = self.config.persona(agent).expect("debaters have personas");
        Ok(self.orch.templates.debater_system(persona, &self.config.topic.text)?)
    }

    fn debater_text(&self, agent: Agent, round: u32, kind: TurnKind, user: String) -> Result<String, StepError> {
        let slot = self.slot(agent, round, Purpose::Turn(kind));
        let request = ChatRequest {
            model: self.config.model(ModelRole::Debater).to_string(),
            messages: vec![ChatMessage::system(self.system_prompt(agent)?), ChatMessage::user(user)],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            slot: Some(slot.clone()),
        };
        self.provider(&slot, self.orch.gateway.chat_complete(&request))
    }

    fn embed(&mut self, agent: Agent, round: u32, text: &str) -> Result<EmbeddingVector, StepError> {
        let slot = self.slot(agent, round, Purpose::Turn(TurnKind::Argument));
        let model = self.config.model(ModelRole::Embedding);
        let result = self.orch.gateway.embed(model, &[text.to_string()]).and_then(|mut v| {
            let raw = v.pop().expect("one vector per text");
            EmbeddingVector::new(raw.values().iter().map(|x| round_sig(*x)).collect())
                .map_err(|e| ProviderError::Protocol(e.to_string()))
        });
        let vector = self.provider(&slot, result)?;
        match self.dim {
            Some(d) if d != vector.dim() => self.provider(
                &slot,
                Err(ProviderError::DimensionMismatch { expected: d, found: vector.dim() }),
            ),
            _ => {
                self.dim = Some(vector.dim());
                Ok(vector)
            }
        }
    }

    fn common<'v>(&'v self, history: &'v str, round: &'v str, rounds: &'v str) -> [(&'v str, &'v str); 4] {
        [("topic", &self.config.topic.text), ("history", history), ("round", round), ("rounds", rounds)]
    }

    fn steps(&mut self) -> Result<(), StepError> {
        let rounds = self.config.rounds.to_string();
        let templates = Arc::clone(&self.orch.templates);

        for agent in Agent::DEBATERS {
            let ask = templates.render("opening_stance", &[("topic", &self.config.topic.text)])?;
            let text = self.debater_text(agent, 0, TurnKind::OpeningStance, ask)?;
            let mut turn = TurnRecord::new(agent, 0, TurnKind::OpeningStance, text.clone());
            turn.embedding = Some(self.embed(agent, 0, &text)?);
            self.turns.push(turn);
            self.history.push(HistoryEntry { agent, round: 0, kind: TurnKind::OpeningStance, text });
        }

        let mut last_stance = [String::new(), String::new()];
        for round in 1..=self.config.rounds {
            let round_s = round.to_string();
            let mut arguments: Vec<(Agent, String, EmbeddingVector)> = Vec::with_capacity(2);
            for agent in argument_order(self.config.speaker_order, round) {
                let history = format_history(&self.history);
                let ask = templates.render("argument", &self.common(&history, &round_s, &rounds))?;
                let text = self.debater_text(agent, round, TurnKind::Argument, ask)?;
                let turn = self.label_argument(agent, round, text.clone())?;
                arguments.push((agent, text.clone(), turn.embedding.clone().expect("arguments are embedded")));
                self.turns.push(turn);
                self.history.push(HistoryEntry { agent, round, kind: TurnKind::Argument, text });
            }

            let request = build_moderator_prompt(self.config, &templates, &self.history, round)?;
            let slot = request.slot.clone().expect("moderator requests carry a slot");
            let text = self.provider(&slot, self.orch.gateway.chat_complete(&request))?;
            self.turns.push(TurnRecord::new(Agent::Moderator, round, TurnKind::Moderation, text.clone()));
            self.history.push(HistoryEntry { agent: Agent::Moderator, round, kind: TurnKind::Moderation, text });

            for (i, agent) in Agent::DEBATERS.into_iter().enumerate() {
                let (text, embedding) = match self.config.stance_source {
                    StanceSource::Elicited => {
                        let history = format_history(&self.history);
                        let ask = templates
                            .render("round_stance_elicitation", &self.common(&history, &round_s, &rounds))?;
                        let text = self.debater_text(agent, round, TurnKind::RoundStance, ask)?;
                        let embedding = self.embed(agent, round, &text)?;
                        (text, embedding)
                    }
                    StanceSource::Argument => {
                        let (_, text, embedding) =
                            arguments.iter().find(|(a, _, _)| *a == agent).expect("each debater argued");
                        (text.clone(), embedding.clone())
                    }
                };
                let mut turn = TurnRecord::new(agent, round, TurnKind::RoundStance, text.clone());
                turn.embedding = Some(embedding);
                self.turns.push(turn);
                last_stance[i] = text;
            }
        }

        let final_round = self.config.rounds;
        let history = format_history(&self.history);
        for (i, agent) in Agent::DEBATERS.into_iter().enumerate() {
            let ask = templates.render(
                "closing_stance",
                &[
                    ("topic", &self.config.topic.text),
                    ("history", &history),
                    ("stance", &last_stance[i]),
                    ("rounds", &rounds),
                ],
            )?;
            let text = self.debater_text(agent, final_round, TurnKind::ClosingStance, ask)?;
            let mut turn = TurnRecord::new(agent, final_round, TurnKind::ClosingStance, text.clone());
            turn.embedding = Some(self.embed(agent, final_round, &text)?);
            self.turns.push(turn);
        }
        Ok(())
    }

    /// Embedding, sentiment, bias and self-report for one argument.
    fn label_argument(&mut self, agent: Agent, round: u32, text: String) -> Result<TurnRecord, StepError> {
        let mut turn = TurnRecord::new(agent, round, TurnKind::Argument, text.clone());
        turn.embedding = Some(self.embed(agent, round, &text)?);

        let slot = self.slot(agent, round, Purpose::Sentiment);
        let sentiment = self.provider(
            &slot,
            self.orch.gateway.classify_sentiment(self.config.model(ModelRole::Sentiment), &text, Some(&slot)),
        )?;
        turn.sentiment = Some(round_sig(sentiment.value));
        if sentiment.clamped {
            turn.flags.push("sentiment_clamped".into());
        }

        let slot = self.slot(agent, round, Purpose::BiasLabel);
        let instruction = self.orch.templates.render("bias_instruction", &[])?;
        let correction = self.orch.templates.render("bias_correction", &[])?;
        let prompt = BiasPrompt { instruction: &instruction, correction: &correction };
        turn.bias = Some(self.provider(
            &slot,
            self.orch.gateway.classify_bias(self.config.model(ModelRole::Bias), &text, prompt, Some(slot.clone())),
        )?);

        let slot = self.slot(agent, round, Purpose::SelfReport);
        let system = self.system_prompt(agent)?;
        let report = self.orch.elicit_self_report(self.config.model(ModelRole::Debater), &system, &text, slot.clone());
        turn.self_report = Some(self.provider(&slot, report)?);
        Ok(turn)
    }
}
