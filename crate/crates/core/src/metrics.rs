//! Semantic and psychometric metrics computed from transcripts.
//!
//! All functions are pure. Similarities live in `[-1, 1]`, distances in
//! `[0, 2]`.

use std::collections::BTreeMap;

use crate::exec::{map_ordered, Execution};
use crate::model::{
    Agent, DebateMetrics, DebateTranscript, EmbeddingVector, PsychometricMeans, RoundMetrics,
    TurnRecord,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("embedding dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("incomplete transcript: {0}")]
    IncompleteTranscript(String),
    #[error("round {round} has {found} argument embeddings, need at least 2")]
    InsufficientArguments { round: u32, found: usize },
    #[error("trend needs at least 2 points, got {len}")]
    SeriesTooShort { len: usize },
    #[error("round {round} has unlabelled arguments")]
    MissingLabels { round: u32 },
    #[error("no parsed self-reports for persona {persona:?}")]
    NoReports { persona: String },
    #[error("round {round} outside 1..={rounds}")]
    RoundOutOfRange { round: u32, rounds: u32 },
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, MetricsError> {
    if u.dim() != v.dim() {
        return Err(MetricsError::DimensionMismatch { left: u.dim(), right: v.dim() });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.values().iter().zip(v.values()) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    // sqrt(x * x) == x in IEEE arithmetic, so sim(v, v) is exactly 1.
    Ok((dot / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

pub fn cosine_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, MetricsError> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

/// Mean cosine similarity over all unordered pairs.
pub fn mean_pairwise_similarity(vectors: &[&EmbeddingVector]) -> Result<f64, MetricsError> {
    pair_mean(vectors, cosine_similarity)
}

/// Mean cosine distance over all unordered pairs.
pub fn mean_pairwise_distance(vectors: &[&EmbeddingVector]) -> Result<f64, MetricsError> {
    pair_mean(vectors, cosine_distance)
}

fn pair_mean<F>(vectors: &[&EmbeddingVector], f: F) -> Result<f64, MetricsError>
where
    F: Fn(&EmbeddingVector, &EmbeddingVector) -> Result<f64, MetricsError>,
{
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, u) in vectors.iter().enumerate() {
        for v in &vectors[i + 1..] {
            sum += f(u, v)?;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(MetricsError::IncompleteTranscript("need at least two vectors".into()));
    }
    Ok(sum / pairs as f64)
}

fn require_complete(t: &DebateTranscript) -> Result<(), MetricsError> {
    if !t.is_complete() {
        return Err(MetricsError::IncompleteTranscript(format!(
            "debate {} was aborted",
            t.config.topic.id
        )));
    }
    Ok(())
}

fn require_round(t: &DebateTranscript, round: u32) -> Result<(), MetricsError> {
    if round == 0 || round > t.config.rounds {
        return Err(MetricsError::RoundOutOfRange { round, rounds: t.config.rounds });
    }
    Ok(())
}

fn embedding_of<'a>(turn: Option<&'a TurnRecord>, what: &str) -> Result<&'a EmbeddingVector, MetricsError> {
    turn.and_then(|t| t.embedding.as_ref())
        .ok_or_else(|| MetricsError::IncompleteTranscript(format!("missing {what}")))
}

fn stance_vector(t: &DebateTranscript, agent: Agent, round: u32) -> Result<&EmbeddingVector, MetricsError> {
    embedding_of(t.stance(agent, round), &format!("{agent} stance for round {round}"))
}

fn closing_vector(t: &DebateTranscript, agent: Agent) -> Result<&EmbeddingVector, MetricsError> {
    embedding_of(t.closing_stance(agent), &format!("{agent} closing stance"))
}

/// Mean pairwise similarity of the debaters' closing stances.
pub fn final_stance_convergence(t: &DebateTranscript) -> Result<f64, MetricsError> {
    require_complete(t)?;
    let vectors = Agent::DEBATERS
        .iter()
        .map(|a| closing_vector(t, *a))
        .collect::<Result<Vec<_>, _>>()?;
    mean_pairwise_similarity(&vectors)
}

/// Cosine distance between an agent's opening and closing stance.
pub fn total_stance_shift(t: &DebateTranscript, agent: Agent) -> Result<f64, MetricsError> {
    require_complete(t)?;
    cosine_distance(stance_vector(t, agent, 0)?, closing_vector(t, agent)?)
}

pub fn round_stance_agreement(t: &DebateTranscript, round: u32) -> Result<f64, MetricsError> {
    require_complete(t)?;
    require_round(t, round)?;
    let vectors = Agent::DEBATERS
        .iter()
        .map(|a| stance_vector(t, *a, round))
        .collect::<Result<Vec<_>, _>>()?;
    mean_pairwise_similarity(&vectors)
}

/// Distance between an agent's stance at `round - 1` and at `round`.
pub fn stance_shift_from_prev(t: &DebateTranscript, agent: Agent, round: u32) -> Result<f64, MetricsError> {
    require_complete(t)?;
    require_round(t, round)?;
    cosine_distance(stance_vector(t, agent, round - 1)?, stance_vector(t, agent, round)?)
}

/// Mean pairwise distance among one round's debater arguments.
pub fn semantic_diversity(t: &DebateTranscript, round: u32) -> Result<f64, MetricsError> {
    let vectors: Vec<&EmbeddingVector> = t.arguments(round).filter_map(|a| a.embedding.as_ref()).collect();
    if vectors.len() < 2 {
        return Err(MetricsError::InsufficientArguments { round, found: vectors.len() });
    }
    mean_pairwise_distance(&vectors)
}

/// Least-squares slope of `series` against the 1-based round index.
pub fn trend(series: &[f64]) -> Result<f64, MetricsError> {
    let n = series.len();
    if n < 2 {
        return Err(MetricsError::SeriesTooShort { len: n });
    }
    // Centred x pairs rounds symmetric about the middle, so the numerator is
    // a sum of (x_i - x̄)(y_i - y_mirror): exactly zero for a constant series
    // and exactly y[2] - y[0] for three points.
    let x_mean = (n as f64 + 1.0) / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n / 2 {
        let dx = (i + 1) as f64 - x_mean;
        num += dx * (series[i] - series[n - 1 - i]);
        den += 2.0 * dx * dx;
    }
    Ok(num / den)
}

fn round_label_mean<F>(t: &DebateTranscript, round: u32, label: F) -> Result<f64, MetricsError>
where
    F: Fn(&TurnRecord) -> Option<f64>,
{
    let values = t
        .arguments(round)
        .map(&label)
        .collect::<Option<Vec<f64>>>()
        .ok_or(MetricsError::MissingLabels { round })?;
    if values.is_empty() {
        return Err(MetricsError::MissingLabels { round });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean binary bias label over a round's arguments.
pub fn round_bias(t: &DebateTranscript, round: u32) -> Result<f64, MetricsError> {
    round_label_mean(t, round, |a| a.bias.map(f64::from))
}

pub fn round_sentiment(t: &DebateTranscript, round: u32) -> Result<f64, MetricsError> {
    round_label_mean(t, round, |a| a.sentiment)
}

/// Running sums for psychometric means.
#[derive(Debug, Clone, Default)]
struct PsychometricAccumulator {
    confidence: f64,
    effort: f64,
    empathy: f64,
    dissonance: f64,
    n: usize,
    unparsed: usize,
}

impl PsychometricAccumulator {
    fn add_turns<'a>(&mut self, turns: impl Iterator<Item = &'a TurnRecord>) {
        for report in turns.filter_map(|t| t.self_report.as_ref()) {
            match (report.parse_ok, report.confidence, report.effort, report.empathy, report.dissonance) {
                (true, Some(c), Some(e), Some(m), Some(d)) => {
                    self.confidence += c;
                    self.effort += f64::from(e);
                    self.empathy += m;
                    self.dissonance += d;
                    self.n += 1;
                }
                _ => self.unparsed += 1,
            }
        }
    }

    fn finish(&self) -> Option<PsychometricMeans> {
        (self.n > 0).then(|| {
            let n = self.n as f64;
            PsychometricMeans {
                confidence: self.confidence / n,
                effort: self.effort / n,
                empathy: self.empathy / n,
                dissonance: self.dissonance / n,
                n_reports: self.n,
                n_unparsed: self.unparsed,
            }
        })
    }
}

/// Means over every parsed self-report made by debaters with the given
/// persona across `transcripts`. Unparsed reports are counted, not averaged.
pub fn psychometric_aggregate(
    transcripts: &[DebateTranscript],
    persona_name: &str,
) -> Result<PsychometricMeans, MetricsError> {
    let mut acc = PsychometricAccumulator::default();
    for t in transcripts {
        for agent in Agent::DEBATERS {
            if t.config.persona(agent).is_some_and(|p| p.name == persona_name) {
                acc.add_turns(t.turns.iter().filter(|turn| turn.agent == agent));
            }
        }
    }
    acc.finish().ok_or_else(|| MetricsError::NoReports { persona: persona_name.to_string() })
}

/// Every per-round and whole-debate metric for a complete transcript.
pub fn compute_debate_metrics(t: &DebateTranscript) -> Result<DebateMetrics, MetricsError> {
    require_complete(t)?;
    let n_rounds = t.config.rounds;

    let mut rounds = Vec::with_capacity(n_rounds as usize);
    for round in 1..=n_rounds {
        let shift_from_prev = Agent::DEBATERS
            .iter()
            .map(|a| Ok((*a, stance_shift_from_prev(t, *a, round)?)))
            .collect::<Result<BTreeMap<_, _>, MetricsError>>()?;
        rounds.push(RoundMetrics {
            round,
            stance_agreement: round_stance_agreement(t, round)?,
            semantic_diversity: semantic_diversity(t, round)?,
            shift_from_prev,
            avg_bias: round_bias(t, round)?,
            avg_sentiment: round_sentiment(t, round)?,
        });
    }

    let total_stance_shift = Agent::DEBATERS
        .iter()
        .map(|a| Ok((*a, total_stance_shift(t, *a)?)))
        .collect::<Result<BTreeMap<_, _>, MetricsError>>()?;
    let mean_total_stance_shift =
        total_stance_shift.values().sum::<f64>() / total_stance_shift.len() as f64;

    let agreement: Vec<f64> = rounds.iter().map(|r| r.stance_agreement).collect();
    let bias: Vec<f64> = rounds.iter().map(|r| r.avg_bias).collect();

    let mut psychometrics = BTreeMap::new();
    let mut personas = BTreeMap::new();
    for agent in Agent::DEBATERS {
        let mut acc = PsychometricAccumulator::default();
        acc.add_turns(t.turns.iter().filter(|turn| turn.agent == agent));
        if let Some(means) = acc.finish() {
            psychometrics.insert(agent, means);
        }
        if let Some(p) = t.config.persona(agent) {
            personas.insert(agent, p.name.clone());
        }
    }

    let clamped_values = t
        .turns
        .iter()
        .map(|turn| turn.flags.len() + usize::from(turn.self_report.as_ref().is_some_and(|r| r.clamped)))
        .sum();

    Ok(DebateMetrics {
        topic_id: t.config.topic.id.clone(),
        contentiousness: t.config.topic.contentiousness,
        moderator: t.config.moderator.style,
        personas,
        n_rounds,
        final_stance_convergence: final_stance_convergence(t)?,
        total_stance_shift,
        mean_total_stance_shift,
        agreement_trend: trend(&agreement).ok(),
        bias_amplification_trend: trend(&bias).ok(),
        rounds,
        psychometrics,
        clamped_values,
    })
}

/// `compute_debate_metrics` over a batch, in input order.
pub fn compute_all(
    transcripts: &[DebateTranscript],
    exec: Execution,
) -> Vec<Result<DebateMetrics, MetricsError>> {
    map_ordered(transcripts, exec, compute_debate_metrics)
}
