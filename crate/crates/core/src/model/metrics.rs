use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Agent, Contentiousness, ModeratorStyle};
use crate::stats::Center;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub stance_agreement: f64,
    pub semantic_diversity: f64,
    pub shift_from_prev: BTreeMap<Agent, f64>,
    pub avg_bias: f64,
    pub avg_sentiment: f64,
}

/// Means of the four self-reported scores over parsed reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsychometricMeans {
    pub confidence: f64,
    pub effort: f64,
    pub empathy: f64,
    pub dissonance: f64,
    /// Parsed reports the means are taken over.
    pub n_reports: usize,
    /// Reports excluded because they could not be parsed.
    pub n_unparsed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateMetrics {
    pub topic_id: String,
    pub contentiousness: Contentiousness,
    pub moderator: ModeratorStyle,
    pub personas: BTreeMap<Agent, String>,
    pub n_rounds: u32,
    pub final_stance_convergence: f64,
    pub total_stance_shift: BTreeMap<Agent, f64>,
    /// Across-agent mean of `total_stance_shift`.
    pub mean_total_stance_shift: f64,
    /// Absent for single-round debates.
    pub agreement_trend: Option<f64>,
    pub bias_amplification_trend: Option<f64>,
    pub rounds: Vec<RoundMetrics>,
    pub psychometrics: BTreeMap<Agent, PsychometricMeans>,
    /// Number of provider values that were clamped into range.
    pub clamped_values: usize,
}

impl DebateMetrics {
    pub fn persona_pair(&self) -> String {
        let a = self.personas.get(&Agent::DebaterA).map(String::as_str).unwrap_or("?");
        let b = self.personas.get(&Agent::DebaterB).map(String::as_str).unwrap_or("?");
        format!("{a} vs {b}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Contentiousness,
    Moderator,
    Persona,
    /// Debate length; separates the short and extended arms.
    Rounds,
}

impl GroupBy {
    pub fn label_for(&self, m: &DebateMetrics) -> String {
        match self {
            Self::Contentiousness => m.contentiousness.as_str().to_string(),
            Self::Moderator => m.moderator.as_str().to_string(),
            Self::Persona => m.persona_pair(),
            Self::Rounds => format!("{} rounds", m.n_rounds),
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Contentiousness => "contentiousness",
            Self::Moderator => "moderator",
            Self::Persona => "persona",
            Self::Rounds => "rounds",
        })
    }
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contentiousness" => Ok(Self::Contentiousness),
            "moderator" => Ok(Self::Moderator),
            "persona" => Ok(Self::Persona),
            "rounds" => Ok(Self::Rounds),
            other => Err(format!("unknown grouping {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n_debates: usize,
    pub convergence_mean: Option<f64>,
    pub convergence_std: Option<f64>,
    pub histogram: Vec<HistogramBin>,
    pub per_round_diversity_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeveneRow {
    pub group_a: String,
    pub group_b: String,
    pub center: Center,
    /// `None` when the statistic is unbounded (zero within-group spread).
    pub w_statistic: Option<f64>,
    pub p_value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateRow {
    pub topic_id: String,
    pub group: String,
    pub contentiousness: Contentiousness,
    pub moderator: ModeratorStyle,
    pub rounds: u32,
    pub final_stance_convergence: f64,
    pub mean_total_stance_shift: f64,
    pub agreement_trend: Option<f64>,
    pub bias_amplification_trend: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_debates: usize,
    pub convergence_mean: Option<f64>,
    pub convergence_std: Option<f64>,
    pub convergence_histogram: Vec<HistogramBin>,
    /// Indexed by round - 1.
    pub per_round_diversity_mean: Vec<f64>,
    pub per_round_agreement_mean: Vec<f64>,
    pub per_round_bias_mean: Vec<f64>,
    pub persona_psychometrics: BTreeMap<String, PsychometricMeans>,
    pub group_by: Option<GroupBy>,
    pub groups: Vec<GroupSummary>,
    /// Always split by moderator style, whatever `group_by` is.
    pub moderator_groups: Vec<GroupSummary>,
    pub levene_results: Vec<LeveneRow>,
    pub debates: Vec<DebateRow>,
}
