//! Cross-debate aggregation: convergence moments and histograms, per-round
//! means, persona psychometrics and Levene comparisons between groups.

use std::collections::BTreeMap;

use crate::model::{
    AggregateReport, DebateMetrics, DebateRow, GroupBy, GroupSummary, HistogramBin, LeveneRow,
    PsychometricMeans,
};
use crate::stats::{self, Center, StatsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("group {label:?} has {found} debate(s); the variance comparison needs at least 2")]
    GroupTooSmall { label: String, found: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub group_by: Option<GroupBy>,
    pub bins: usize,
    /// Convergence is a cosine similarity, so the default covers [-1, 1].
    pub range: (f64, f64),
    pub center: Center,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { group_by: None, bins: 40, range: (-1.0, 1.0), center: Center::Mean }
    }
}

fn moments(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), None),
        _ => {
            let (m, s) = stats::mean_std(values).expect("two or more values");
            (Some(m), Some(s))
        }
    }
}

fn bins(values: &[f64], opts: &ReportOptions) -> Result<Vec<HistogramBin>, StatsError> {
    let h = stats::histogram(values, opts.bins, opts.range)?;
    if h.out_of_range > 0 {
        tracing::warn!(n = h.out_of_range, "convergence values outside the histogram range");
    }
    Ok(h.bins)
}

/// Mean of `f(debate, round)` per round over the debates that reached it.
fn per_round(metrics: &[&DebateMetrics], f: impl Fn(&crate::model::RoundMetrics) -> f64) -> Vec<f64> {
    let max = metrics.iter().map(|m| m.rounds.len()).max().unwrap_or(0);
    (0..max)
        .map(|r| {
            let vals: Vec<f64> = metrics.iter().filter_map(|m| m.rounds.get(r)).map(&f).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

fn summarize(label: String, metrics: &[&DebateMetrics], opts: &ReportOptions) -> Result<GroupSummary, StatsError> {
    let conv: Vec<f64> = metrics.iter().map(|m| m.final_stance_convergence).collect();
    let (convergence_mean, convergence_std) = moments(&conv);
    Ok(GroupSummary {
        label,
        n_debates: metrics.len(),
        convergence_mean,
        convergence_std,
        histogram: bins(&conv, opts)?,
        per_round_diversity_mean: per_round(metrics, |r| r.semantic_diversity),
    })
}

fn split(metrics: &[DebateMetrics], by: GroupBy) -> BTreeMap<String, Vec<&DebateMetrics>> {
    let mut groups: BTreeMap<String, Vec<&DebateMetrics>> = BTreeMap::new();
    for m in metrics {
        groups.entry(by.label_for(m)).or_default().push(m);
    }
    groups
}

/// Report-count-weighted psychometric means per persona name.
fn persona_psychometrics(metrics: &[DebateMetrics]) -> BTreeMap<String, PsychometricMeans> {
    let mut sums: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for m in metrics {
        for (agent, p) in &m.psychometrics {
            let Some(name) = m.personas.get(agent) else { continue };
            let n = p.n_reports as f64;
            let s = sums.entry(name.clone()).or_default();
            s[0] += p.confidence * n;
            s[1] += p.effort * n;
            s[2] += p.empathy * n;
            s[3] += p.dissonance * n;
            let c = counts.entry(name.clone()).or_default();
            c.0 += p.n_reports;
            c.1 += p.n_unparsed;
        }
    }
    sums.into_iter()
        .map(|(name, s)| {
            let (n, unparsed) = counts[&name];
            let d = n as f64;
            let means = PsychometricMeans {
                confidence: s[0] / d,
                effort: s[1] / d,
                empathy: s[2] / d,
                dissonance: s[3] / d,
                n_reports: n,
                n_unparsed: unparsed,
            };
            (name, means)
        })
        .collect()
}

/// Aggregates per-debate metrics. With a grouping that yields exactly two
/// groups, their convergence distributions are compared with Levene's test.
pub fn build_report(metrics: &[DebateMetrics], opts: &ReportOptions) -> Result<AggregateReport, ReportError> {
    let all: Vec<&DebateMetrics> = metrics.iter().collect();
    let overall = summarize("all".into(), &all, opts)?;

    let mut groups = Vec::new();
    let mut levene_results = Vec::new();
    if let Some(by) = opts.group_by {
        let split = split(metrics, by);
        for (label, members) in &split {
            groups.push(summarize(label.clone(), members, opts)?);
        }
        if split.len() == 2 {
            let mut it = split.iter();
            let (la, a) = it.next().expect("two groups");
            let (lb, b) = it.next().expect("two groups");
            for (label, g) in [(la, a), (lb, b)] {
                if g.len() < 2 {
                    return Err(ReportError::GroupTooSmall { label: label.clone(), found: g.len() });
                }
            }
            let conv = |g: &[&DebateMetrics]| g.iter().map(|m| m.final_stance_convergence).collect::<Vec<_>>();
            let outcome = stats::levene_test(&conv(a), &conv(b), opts.center)?;
            levene_results.push(LeveneRow {
                group_a: la.clone(),
                group_b: lb.clone(),
                center: opts.center,
                w_statistic: outcome.w.is_finite().then_some(outcome.w),
                p_value: outcome.p_value,
                degenerate: outcome.degenerate,
            });
        } else {
            tracing::info!(groups = split.len(), "variance comparison runs only for exactly two groups");
        }
    }

    let moderator_groups = split(metrics, GroupBy::Moderator)
        .into_iter()
        .map(|(label, members)| summarize(label, &members, opts))
        .collect::<Result<Vec<_>, _>>()?;

    let debates = metrics
        .iter()
        .map(|m| DebateRow {
            topic_id: m.topic_id.clone(),
            group: opts.group_by.map_or_else(|| "all".to_string(), |g| g.label_for(m)),
            contentiousness: m.contentiousness,
            moderator: m.moderator,
            rounds: m.n_rounds,
            final_stance_convergence: m.final_stance_convergence,
            mean_total_stance_shift: m.mean_total_stance_shift,
            agreement_trend: m.agreement_trend,
            bias_amplification_trend: m.bias_amplification_trend,
        })
        .collect();

    Ok(AggregateReport {
        n_debates: metrics.len(),
        convergence_mean: overall.convergence_mean,
        convergence_std: overall.convergence_std,
        convergence_histogram: overall.histogram,
        per_round_diversity_mean: overall.per_round_diversity_mean,
        per_round_agreement_mean: per_round(&all, |r| r.stance_agreement),
        per_round_bias_mean: per_round(&all, |r| r.avg_bias),
        persona_psychometrics: persona_psychometrics(metrics),
        group_by: opts.group_by,
        groups,
        moderator_groups,
        levene_results,
        debates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Agent, Contentiousness, ModeratorStyle, RoundMetrics};

    fn debate(id: &str, conv: f64, label: Contentiousness, diversity: &[f64]) -> DebateMetrics {
        let rounds = diversity
            .iter()
            .enumerate()
            .map(|(i, d)| RoundMetrics {
                round: i as u32 + 1,
                stance_agreement: conv,
                semantic_diversity: *d,
                shift_from_prev: BTreeMap::new(),
                avg_bias: 0.5,
                avg_sentiment: 0.5,
            })
            .collect();
        let report = |c: f64, n: usize| PsychometricMeans {
            confidence: c,
            effort: 3.0,
            empathy: 0.5,
            dissonance: 0.1,
            n_reports: n,
            n_unparsed: 1,
        };
        DebateMetrics {
            topic_id: id.into(),
            contentiousness: label,
            moderator: ModeratorStyle::Neutral,
            personas: [(Agent::DebaterA, "analyst".to_string()), (Agent::DebaterB, "ethicist".to_string())].into(),
            n_rounds: diversity.len() as u32,
            final_stance_convergence: conv,
            total_stance_shift: BTreeMap::new(),
            mean_total_stance_shift: 0.1,
            agreement_trend: None,
            bias_amplification_trend: None,
            rounds,
            psychometrics: [(Agent::DebaterA, report(0.8, 3)), (Agent::DebaterB, report(0.6, 1))].into(),
            clamped_values: 0,
        }
    }

    #[test]
    fn histogram_counts_sum_to_debates() {
        let ms: Vec<_> = (0..7).map(|i| debate(&i.to_string(), i as f64 / 7.0, Contentiousness::Unlabeled, &[0.3])).collect();
        let r = build_report(&ms, &ReportOptions::default()).unwrap();
        assert_eq!(r.convergence_histogram.iter().map(|b| b.count).sum::<usize>(), 7);
        assert_eq!(r.per_round_diversity_mean, vec![0.3]);
        assert!(r.levene_results.is_empty());
    }

    #[test]
    fn persona_means_are_report_weighted() {
        let ms = vec![
            debate("a", 0.9, Contentiousness::Unlabeled, &[0.3]),
            debate("b", 0.8, Contentiousness::Unlabeled, &[0.3]),
        ];
        let r = build_report(&ms, &ReportOptions::default()).unwrap();
        let analyst = &r.persona_psychometrics["analyst"];
        assert_eq!((analyst.n_reports, analyst.n_unparsed), (6, 2));
        assert!((analyst.confidence - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_groups_get_a_levene_row() {
        let ms = vec![
            debate("a", 0.9, Contentiousness::Contentious, &[0.3]),
            debate("b", 0.7, Contentiousness::Contentious, &[0.3]),
            debate("c", 0.8, Contentiousness::LessContentious, &[0.3]),
            debate("d", 0.6, Contentiousness::LessContentious, &[0.3]),
        ];
        let opts = ReportOptions { group_by: Some(GroupBy::Contentiousness), ..Default::default() };
        let r = build_report(&ms, &opts).unwrap();
        assert_eq!(r.levene_results.len(), 1);
        let row = &r.levene_results[0];
        // identical spreads: zero between-group variation
        assert_eq!((row.w_statistic, row.p_value), (Some(0.0), 1.0));
        assert_eq!(r.debates[0].group, "contentious");
    }

    #[test]
    fn singleton_group_is_rejected() {
        let ms = vec![
            debate("a", 0.9, Contentiousness::Contentious, &[0.3]),
            debate("b", 0.7, Contentiousness::Contentious, &[0.3]),
            debate("c", 0.8, Contentiousness::LessContentious, &[0.3]),
        ];
        let opts = ReportOptions { group_by: Some(GroupBy::Contentiousness), ..Default::default() };
        assert_eq!(
            build_report(&ms, &opts),
            Err(ReportError::GroupTooSmall { label: "less_contentious".into(), found: 1 })
        );
    }

    #[test]
    fn mixed_lengths_average_over_debates_reaching_the_round() {
        let ms = vec![
            debate("a", 0.9, Contentiousness::Unlabeled, &[0.4, 0.2]),
            debate("b", 0.9, Contentiousness::Unlabeled, &[0.2]),
        ];
        let r = build_report(&ms, &ReportOptions::default()).unwrap();
        assert_eq!(r.per_round_diversity_mean, vec![0.30000000000000004, 0.2]);
    }

    #[test]
    fn empty_input_yields_empty_report() {
        let r = build_report(&[], &ReportOptions::default()).unwrap();
        assert_eq!(r.n_debates, 0);
        assert_eq!(r.convergence_mean, None);
        assert!(r.per_round_diversity_mean.is_empty());
        assert_eq!(r.convergence_histogram.len(), 40);
    }
}
