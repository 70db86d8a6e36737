//! Run directories on disk.
//!
//! ```text
//! <run>/manifest.json
//! <run>/transcripts/<topic_id>.jsonl   header line, then one turn per line
//! <run>/metrics/<topic_id>.json
//! <run>/skipped.json                   written by analysis
//! <out>/aggregate.json, <out>/*.csv    written by aggregation
//! ```
//!
//! All JSON goes through [`crate::numfmt`], so identical inputs give
//! identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::model::{
    AggregateReport, DebateConfig, DebateMetrics, DebateStatus, DebateTranscript, GroupSummary,
    ModelRole, ModeratorStyle, SpeakerOrder, StanceSource, TurnRecord,
};
use crate::numfmt::{fmt_f64, fmt_opt, to_json_line, to_json_pretty};

pub const TRANSCRIPT_SCHEMA: &str = "debatelab.transcript/1";
pub const MANIFEST_SCHEMA: &str = "debatelab.manifest/1";

/// A transcript file that does not parse or violates the protocol.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message} (last good line {last_good_line})")]
pub struct SchemaError {
    /// 1-based line of the problem; one past the end for missing turns.
    pub line: usize,
    pub last_good_line: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Schema { path: String, source: SchemaError },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("topic ids {a:?} and {b:?} map to the same file name")]
    NameCollision { a: String, b: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Writes via a temporary sibling and a rename so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let text = to_json_pretty(value).map_err(|source| StoreError::Json { path: path.display().to_string(), source })?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json { path: path.display().to_string(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// File-name-safe form of a topic id.
pub fn file_stem(topic_id: &str) -> String {
    topic_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Fails when two topic ids would share a file.
pub fn check_file_stems<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<(), StoreError> {
    let mut seen: BTreeMap<String, &str> = BTreeMap::new();
    for id in ids {
        if let Some(prev) = seen.insert(file_stem(id), id) {
            return Err(StoreError::NameCollision { a: prev.to_string(), b: id.to_string() });
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TranscriptHeader {
    schema: String,
    status: DebateStatus,
    created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    abort_reason: Option<String>,
    config: DebateConfig,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// JSON-lines text of a transcript: a header object, then one turn per line.
pub fn transcript_to_string(t: &DebateTranscript) -> String {
    let header = TranscriptHeader {
        schema: TRANSCRIPT_SCHEMA.to_string(),
        status: t.status,
        created_at: t.created_at,
        abort_reason: t.abort_reason.clone(),
        config: t.config.clone(),
        extra: t.header_extra.clone(),
    };
    let mut out = to_json_line(&header).expect("header serializes");
    out.push('\n');
    for turn in &t.turns {
        out.push_str(&to_json_line(turn).expect("turn serializes"));
        out.push('\n');
    }
    out
}

/// Inverse of [`transcript_to_string`]. Rejects files that break the protocol.
pub fn transcript_from_str(text: &str) -> Result<DebateTranscript, SchemaError> {
    let mut lines = text.split_terminator('\n').enumerate();
    let err = |line: usize, message: String| SchemaError { line, last_good_line: line.saturating_sub(1), message };

    let (_, first) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let header: TranscriptHeader =
        serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
    if header.schema != TRANSCRIPT_SCHEMA {
        return Err(err(1, format!("unsupported schema {:?}", header.schema)));
    }

    let mut turns = Vec::new();
    for (i, line) in lines {
        let turn: TurnRecord = serde_json::from_str(line).map_err(|e| err(i + 1, format!("bad turn: {e}")))?;
        turns.push(turn);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        let n = text.split_terminator('\n').count();
        return Err(err(n, "file does not end with a newline; it may be truncated".into()));
    }

    let transcript = DebateTranscript {
        config: header.config,
        turns,
        status: header.status,
        created_at: header.created_at,
        abort_reason: header.abort_reason,
        header_extra: header.extra,
    };
    transcript
        .check_protocol()
        .map_err(|v| err(v.index + 2, v.message))?;
    Ok(transcript)
}

pub fn save_transcript(t: &DebateTranscript, dir: &Path) -> Result<PathBuf, StoreError> {
    let path = dir.join(format!("{}.jsonl", file_stem(&t.config.topic.id)));
    write_atomic(&path, transcript_to_string(t).as_bytes())?;
    Ok(path)
}

pub fn load_transcript(path: &Path) -> Result<DebateTranscript, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    transcript_from_str(&text).map_err(|source| StoreError::Schema { path: path.display().to_string(), source })
}

pub fn save_metrics(m: &DebateMetrics, dir: &Path) -> Result<PathBuf, StoreError> {
    let path = dir.join(format!("{}.json", file_stem(&m.topic_id)));
    write_json(&path, m)?;
    Ok(path)
}

/// Defaults every debate in a run shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDefaults {
    pub rounds: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub debater_a: String,
    pub debater_b: String,
    pub moderator: ModeratorStyle,
    pub stance_source: StanceSource,
    pub speaker_order: SpeakerOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    /// First 16 hex digits of the SHA-256 of the manifest with this field empty.
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub tool_version: String,
    /// Base URL, or `mock:<scenario>`.
    pub provider: String,
    pub seed: u64,
    pub defaults: RunDefaults,
    pub model_ids: BTreeMap<ModelRole, String>,
    /// Hex SHA-256 of each input file's exact bytes, by role
    /// (`topics`, `templates`, `personas`, `scenario`).
    pub input_hashes: BTreeMap<String, String>,
    pub topics: Vec<String>,
}

impl RunManifest {
    /// Fills `run_id` from the other fields.
    pub fn sealed(mut self) -> Self {
        self.run_id = String::new();
        let digest = sha256_hex(to_json_line(&self).expect("manifest serializes").as_bytes());
        self.run_id = digest[..16].to_string();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SkipReport {
    pub skipped: Vec<SkipEntry>,
}

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = Self::new(root);
        for d in [dir.transcripts(), dir.metrics()] {
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn skipped(&self) -> PathBuf {
        self.root.join("skipped.json")
    }

    /// `*.jsonl` files under `transcripts/`, sorted by name. A missing
    /// directory lists as empty.
    pub fn list_transcripts(&self) -> Result<Vec<PathBuf>, StoreError> {
        list_with_extension(&self.transcripts(), "jsonl")
    }

    pub fn list_metrics(&self) -> Result<Vec<PathBuf>, StoreError> {
        list_with_extension(&self.metrics(), "json")
    }

    pub fn load_metrics(&self) -> Result<Vec<DebateMetrics>, StoreError> {
        self.list_metrics()?.iter().map(|p| read_json(p)).collect()
    }
}

fn list_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, StoreError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf, StoreError> {
    let csv_err = |source| StoreError::Csv { path: path.display().to_string(), source };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| StoreError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    write_atomic(path, &bytes)?;
    Ok(path.to_path_buf())
}

pub const AGGREGATE_JSON: &str = "aggregate.json";

/// Header of every aggregate CSV, by file name.
pub const AGGREGATE_CSVS: &[(&str, &[&str])] = &[
    (
        "debates.csv",
        &[
            "topic_id",
            "group",
            "contentiousness",
            "moderator",
            "rounds",
            "final_stance_convergence",
            "mean_total_stance_shift",
            "agreement_trend",
            "bias_amplification_trend",
        ],
    ),
    ("histogram.csv", &["bin_lo", "bin_hi", "count"]),
    ("per_round.csv", &["round", "semantic_diversity_mean", "stance_agreement_mean", "avg_bias_mean"]),
    (
        "persona_psychometrics.csv",
        &["persona", "confidence", "effort", "empathy", "dissonance", "n_reports", "n_unparsed"],
    ),
    ("levene.csv", &["group_a", "group_b", "center", "w_statistic", "p_value", "degenerate"]),
    ("groups.csv", &["grouping", "group", "n_debates", "convergence_mean", "convergence_std"]),
    ("group_histograms.csv", &["grouping", "group", "bin_lo", "bin_hi", "count"]),
];

fn csv_header(name: &str) -> &'static [&'static str] {
    AGGREGATE_CSVS.iter().find(|(n, _)| *n == name).map(|(_, h)| *h).expect("known csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateFormat {
    Json,
    Csv,
    Both,
}

fn group_rows(grouping: &str, groups: &[GroupSummary]) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut summary = Vec::new();
    let mut hist = Vec::new();
    for g in groups {
        summary.push(vec![
            grouping.to_string(),
            g.label.clone(),
            g.n_debates.to_string(),
            fmt_opt(g.convergence_mean),
            fmt_opt(g.convergence_std),
        ]);
        for b in &g.histogram {
            hist.push(vec![grouping.to_string(), g.label.clone(), fmt_f64(b.lo), fmt_f64(b.hi), b.count.to_string()]);
        }
    }
    (summary, hist)
}

/// Writes `aggregate.json` and/or the fixed-schema CSVs into `dir`.
pub fn write_aggregate(report: &AggregateReport, dir: &Path, format: AggregateFormat) -> Result<Vec<PathBuf>, StoreError> {
    let mut written = Vec::new();
    if matches!(format, AggregateFormat::Json | AggregateFormat::Both) {
        let path = dir.join(AGGREGATE_JSON);
        write_json(&path, report)?;
        written.push(path);
    }
    if format == AggregateFormat::Json {
        return Ok(written);
    }
    let file = |name: &str| (dir.join(name), csv_header(name));

    let debates = report
        .debates
        .iter()
        .map(|d| {
            vec![
                d.topic_id.clone(),
                d.group.clone(),
                d.contentiousness.as_str().to_string(),
                d.moderator.as_str().to_string(),
                d.rounds.to_string(),
                fmt_f64(d.final_stance_convergence),
                fmt_f64(d.mean_total_stance_shift),
                fmt_opt(d.agreement_trend),
                fmt_opt(d.bias_amplification_trend),
            ]
        })
        .collect();
    let (p, h) = file("debates.csv");
    written.push(write_csv(&p, h, debates)?);

    let hist = report
        .convergence_histogram
        .iter()
        .map(|b| vec![fmt_f64(b.lo), fmt_f64(b.hi), b.count.to_string()])
        .collect();
    let (p, h) = file("histogram.csv");
    written.push(write_csv(&p, h, hist)?);

    let per_round = (0..report.per_round_diversity_mean.len())
        .map(|i| {
            vec![
                (i + 1).to_string(),
                fmt_f64(report.per_round_diversity_mean[i]),
                fmt_opt(report.per_round_agreement_mean.get(i).copied()),
                fmt_opt(report.per_round_bias_mean.get(i).copied()),
            ]
        })
        .collect();
    let (p, h) = file("per_round.csv");
    written.push(write_csv(&p, h, per_round)?);

    let personas = report
        .persona_psychometrics
        .iter()
        .map(|(name, m)| {
            vec![
                name.clone(),
                fmt_f64(m.confidence),
                fmt_f64(m.effort),
                fmt_f64(m.empathy),
                fmt_f64(m.dissonance),
                m.n_reports.to_string(),
                m.n_unparsed.to_string(),
            ]
        })
        .collect();
    let (p, h) = file("persona_psychometrics.csv");
    written.push(write_csv(&p, h, personas)?);

    let levene = report
        .levene_results
        .iter()
        .map(|l| {
            vec![
                l.group_a.clone(),
                l.group_b.clone(),
                match l.center {
                    crate::stats::Center::Mean => "mean".to_string(),
                    crate::stats::Center::Median => "median".to_string(),
                },
                l.w_statistic.map_or_else(|| "inf".to_string(), fmt_f64),
                fmt_f64(l.p_value),
                l.degenerate.to_string(),
            ]
        })
        .collect();
    let (p, h) = file("levene.csv");
    written.push(write_csv(&p, h, levene)?);

    let mut summary = Vec::new();
    let mut hist = Vec::new();
    if let Some(by) = report.group_by {
        let (s, h) = group_rows(&by.to_string(), &report.groups);
        summary.extend(s);
        hist.extend(h);
    }
    let (s, h) = group_rows("moderator", &report.moderator_groups);
    summary.extend(s);
    hist.extend(h);
    let (p, h) = file("groups.csv");
    written.push(write_csv(&p, h, summary)?);
    let (p, hd) = file("group_histograms.csv");
    written.push(write_csv(&p, hd, hist)?);
    Ok(written)
}

pub fn read_aggregate(dir: &Path) -> Result<AggregateReport, StoreError> {
    read_json(&dir.join(AGGREGATE_JSON))
}

/// The four plot-data files and their headers.
pub const PLOT_DATA: &[(&str, &[&str])] = &[
    ("convergence_histogram.csv", &["series", "bin_lo", "bin_hi", "count"]),
    ("diversity_per_round.csv", &["round", "series", "semantic_diversity_mean"]),
    (
        "psychometrics_by_persona.csv",
        &["persona", "confidence", "effort", "empathy", "dissonance", "n_reports"],
    ),
    ("moderator_comparison.csv", &["moderator", "bin_lo", "bin_hi", "count", "n_debates", "convergence_mean"]),
];

/// Writes the figure inputs derived from an aggregate report.
///
/// `series` is `all` for the whole arm, otherwise a group label.
/// `diversity_per_round.csv` holds only the `all` series, one row per round.
pub fn write_plot_data(report: &AggregateReport, dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let header = |name: &str| PLOT_DATA.iter().find(|(n, _)| *n == name).map(|(_, h)| *h).expect("known file");
    let mut written = Vec::new();

    let mut hist: Vec<Vec<String>> = report
        .convergence_histogram
        .iter()
        .map(|b| vec!["all".to_string(), fmt_f64(b.lo), fmt_f64(b.hi), b.count.to_string()])
        .collect();
    for g in &report.groups {
        hist.extend(
            g.histogram
                .iter()
                .map(|b| vec![g.label.clone(), fmt_f64(b.lo), fmt_f64(b.hi), b.count.to_string()]),
        );
    }
    let name = "convergence_histogram.csv";
    written.push(write_csv(&dir.join(name), header(name), hist)?);

    let diversity = report
        .per_round_diversity_mean
        .iter()
        .enumerate()
        .map(|(i, d)| vec![(i + 1).to_string(), "all".to_string(), fmt_f64(*d)])
        .collect();
    let name = "diversity_per_round.csv";
    written.push(write_csv(&dir.join(name), header(name), diversity)?);

    let psych = report
        .persona_psychometrics
        .iter()
        .map(|(p, m)| {
            vec![
                p.clone(),
                fmt_f64(m.confidence),
                fmt_f64(m.effort),
                fmt_f64(m.empathy),
                fmt_f64(m.dissonance),
                m.n_reports.to_string(),
            ]
        })
        .collect();
    let name = "psychometrics_by_persona.csv";
    written.push(write_csv(&dir.join(name), header(name), psych)?);

    let mut moderator = Vec::new();
    for g in &report.moderator_groups {
        for b in &g.histogram {
            moderator.push(vec![
                g.label.clone(),
                fmt_f64(b.lo),
                fmt_f64(b.hi),
                b.count.to_string(),
                g.n_debates.to_string(),
                fmt_opt(g.convergence_mean),
            ]);
        }
    }
    let name = "moderator_comparison.csv";
    written.push(write_csv(&dir.join(name), header(name), moderator)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("cmv/42 a"), "cmv_42_a");
        assert_eq!(file_stem("t-1.x"), "t-1.x");
        assert!(check_file_stems(["a/b", "a_b"]).is_err());
        assert!(check_file_stems(["a", "b"]).is_ok());
    }

    #[test]
    fn empty_report_writes_header_only_csvs() {
        let dir = tempfile::tempdir().unwrap();
        let report = crate::report::build_report(&[], &Default::default()).unwrap();
        let files = write_aggregate(&report, dir.path(), AggregateFormat::Csv).unwrap();
        assert_eq!(files.len(), AGGREGATE_CSVS.len());
        let debates = fs::read_to_string(dir.path().join("debates.csv")).unwrap();
        assert_eq!(debates.lines().count(), 1);
        // the histogram still lists its (empty) bins
        let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
        assert_eq!(hist.lines().count(), 41);
    }

    #[test]
    fn manifest_id_depends_on_content() {
        let m = RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            run_id: String::new(),
            created_at: DateTime::UNIX_EPOCH,
            tool_version: "0".into(),
            provider: "mock:x".into(),
            seed: 1,
            defaults: RunDefaults {
                rounds: 3,
                temperature: 0.3,
                max_tokens: 10,
                debater_a: "a".into(),
                debater_b: "b".into(),
                moderator: ModeratorStyle::Neutral,
                stance_source: StanceSource::Elicited,
                speaker_order: SpeakerOrder::AFirst,
            },
            model_ids: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            topics: vec!["t".into()],
        };
        let a = m.clone().sealed();
        assert_eq!(a.run_id.len(), 16);
        assert_eq!(a.run_id, a.clone().sealed().run_id);
        let mut other = m;
        other.seed = 2;
        assert_ne!(a.run_id, other.sealed().run_id);
    }
}
