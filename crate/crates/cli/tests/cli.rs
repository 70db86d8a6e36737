//! End-to-end runs of the binary over mock scenarios.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{generated_scenario, ten_topics, topics_jsonl};
use debatelab::model::Agent;
use debatelab::provider::{FailurePoint, MockScenario};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_debatelab"))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        fs::write(f.path("topics.jsonl"), topics_jsonl(&ten_topics())).unwrap();
        f.scenario("scenario.json", &generated_scenario(42));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn scenario(&self, name: &str, s: &MockScenario) -> String {
        fs::write(self.path(name), serde_json::to_string_pretty(s).unwrap()).unwrap();
        format!("mock:{}", self.path(name).display())
    }

    fn run_with(&self, out: &str, rounds: u32, provider: &str, extra: &[&str]) -> Output {
        bin()
            .args(["run", "--topics"])
            .arg(self.path("topics.jsonl"))
            .args(["--rounds", &rounds.to_string()])
            .args(["--debater-a", "evidence-driven analyst", "--debater-b", "values-focused ethicist"])
            .args(["--moderator", "neutral", "--provider", provider, "--seed", "7", "--out"])
            .arg(self.path(out))
            .args(extra)
            .output()
            .unwrap()
    }

    fn run(&self, out: &str, rounds: u32) -> Output {
        let provider = format!("mock:{}", self.path("scenario.json").display());
        self.run_with(out, rounds, &provider, &[])
    }

    fn sub(&self, args: &[&str]) -> Output {
        let mut cmd = bin();
        for a in args {
            if let Some(rel) = a.strip_prefix('@') {
                cmd.arg(self.path(rel));
            } else {
                cmd.arg(a);
            }
        }
        cmd.output().unwrap()
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

#[test]
fn mock_run_writes_one_transcript_per_topic() {
    let f = Fixture::new();
    let out = f.run("run", 3);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let written = files(&f.path("run"));
    let transcripts = written.keys().filter(|k| k.starts_with("transcripts/")).count();
    let metrics = written.keys().filter(|k| k.starts_with("metrics/")).count();
    assert_eq!((transcripts, metrics), (10, 10));
    let manifest: serde_json::Value = serde_json::from_slice(&written["manifest.json"]).unwrap();
    assert_eq!(manifest["topics"].as_array().unwrap().len(), 10);
    assert_eq!(manifest["run_id"].as_str().unwrap().len(), 16);
    assert!(manifest["input_hashes"]["scenario"].is_string());
}

#[test]
fn limit_takes_the_first_topics() {
    let f = Fixture::new();
    let provider = format!("mock:{}", f.path("scenario.json").display());
    assert_eq!(code(&f.run_with("run", 1, &provider, &["--limit", "3"])), 0);
    assert_eq!(fs::read_dir(f.path("run/transcripts")).unwrap().count(), 3);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let f = Fixture::new();
    let no_topics = f.sub(&["run", "--rounds", "3", "--debater-a", "a", "--debater-b", "b", "--moderator", "neutral", "--provider", "mock:x", "--out", "@o"]);
    assert_eq!(code(&no_topics), 1);
    assert_eq!(code(&f.run("zero", 0)), 1);
    let missing = f.run_with("o", 3, "mock:/nonexistent/scenario.json", &[]);
    assert_eq!(code(&missing), 1);
    let persona = f.sub(&[
        "run", "--topics", "@topics.jsonl", "--rounds", "1", "--debater-a", "nobody", "--debater-b", "contrarian debater",
        "--moderator", "neutral", "--provider", "mock:x", "--out", "@o",
    ]);
    assert_eq!(code(&persona), 1);
    assert!(String::from_utf8_lossy(&persona.stderr).contains("nobody"));
}

#[test]
fn injected_failure_exits_two_and_keeps_the_rest() {
    let f = Fixture::new();
    let scenario = MockScenario {
        failures: vec![FailurePoint { topic: Some("topic-03".into()), agent: Some(Agent::DebaterB), round: 2, kind: None }],
        ..generated_scenario(42)
    };
    let provider = f.scenario("failing.json", &scenario);
    let out = f.run_with("run", 3, &provider, &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("topic-03"));
    assert_eq!(fs::read_dir(f.path("run/transcripts")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(f.path("run/metrics")).unwrap().count(), 9);
}

#[test]
fn run_is_byte_identical_across_repeats_and_parallelism() {
    let f = Fixture::new();
    let provider = format!("mock:{}", f.path("scenario.json").display());
    assert_eq!(code(&f.run("a", 3)), 0);
    assert_eq!(code(&f.run_with("b", 3, &provider, &["--parallel", "4"])), 0);
    assert_eq!(files(&f.path("a")), files(&f.path("b")));
}

#[test]
fn analyze_is_deterministic_and_skips_damaged_files() {
    let f = Fixture::new();
    assert_eq!(code(&f.run("run", 2)), 0);
    let t = f.path("run/transcripts/topic-05.jsonl");
    let text = fs::read_to_string(&t).unwrap();
    fs::write(&t, &text[..text.len() / 2]).unwrap();

    for out in ["an1", "an2"] {
        let o = f.sub(&["analyze", "--in", "@run", "--out", &format!("@{out}")]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(files(&f.path("an1")), files(&f.path("an2")));
    let skipped: serde_json::Value = serde_json::from_slice(&fs::read(f.path("an1/skipped.json")).unwrap()).unwrap();
    let entries = skipped["skipped"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["file"], "topic-05.jsonl");
    assert!(entries[0]["reason"].as_str().unwrap().contains("line"));
    assert_eq!(fs::read_dir(f.path("an1/metrics")).unwrap().count(), 9);
    // metrics from analyze equal those written by run
    assert_eq!(fs::read(f.path("an1/metrics/topic-00.json")).unwrap(), fs::read(f.path("run/metrics/topic-00.json")).unwrap());
}

#[test]
fn analyze_edge_cases() {
    let f = Fixture::new();
    assert_eq!(code(&f.sub(&["analyze", "--in", "@missing", "--out", "@x"])), 1);
    fs::create_dir_all(f.path("empty/transcripts")).unwrap();
    assert_eq!(code(&f.sub(&["analyze", "--in", "@empty", "--out", "@x"])), 0);
    let skipped: serde_json::Value = serde_json::from_slice(&fs::read(f.path("x/skipped.json")).unwrap()).unwrap();
    assert!(skipped["skipped"].as_array().unwrap().is_empty());
}

#[test]
fn aggregate_single_arm_and_contentiousness_groups() {
    let f = Fixture::new();
    assert_eq!(code(&f.run("run", 3)), 0);
    let o = f.sub(&["aggregate", "--in", "@run", "--out", "@agg"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(f.path("agg/aggregate.json")).unwrap()).unwrap();
    assert_eq!(report["n_debates"], 10);
    assert_eq!(report["convergence_histogram"].as_array().unwrap().len(), 40);
    assert_eq!(csv_rows(&f.path("agg/debates.csv")).len(), 10);

    let o = f.sub(&["aggregate", "--in", "@run", "--group-by", "contentiousness", "--out", "@grouped"]);
    assert_eq!(code(&o), 0);
    let levene = csv_rows(&f.path("grouped/levene.csv"));
    assert_eq!(levene.len(), 1);
    assert_eq!((levene[0]["group_a"].as_str(), levene[0]["group_b"].as_str()), ("contentious", "less_contentious"));
    let p: f64 = levene[0]["p_value"].parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn aggregate_two_arms_by_round_count() {
    let f = Fixture::new();
    assert_eq!(code(&f.run("r3", 3)), 0);
    assert_eq!(code(&f.run("r7", 7)), 0);
    let o = f.sub(&["aggregate", "--in", "@r3", "@r7", "--group-by", "rounds", "--out", "@agg"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let groups = csv_rows(&f.path("agg/groups.csv"));
    let labels: Vec<&str> = groups.iter().filter(|g| g["grouping"] == "rounds").map(|g| g["group"].as_str()).collect();
    assert_eq!(labels, ["3 rounds", "7 rounds"]);
    assert_eq!(csv_rows(&f.path("agg/levene.csv")).len(), 1);
}

#[test]
fn aggregate_rejects_a_singleton_group_and_missing_metrics() {
    let f = Fixture::new();
    let one = common::topics_jsonl(&[ten_topics()[0].clone(), ten_topics()[1].clone(), ten_topics()[2].clone()]);
    fs::write(f.path("topics.jsonl"), one).unwrap();
    assert_eq!(code(&f.run("run", 1)), 0);
    let o = f.sub(&["aggregate", "--in", "@run", "--group-by", "contentiousness", "--out", "@agg"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("less_contentious"));
    assert_eq!(code(&f.sub(&["aggregate", "--in", "@nowhere", "--out", "@agg"])), 1);
}

#[test]
fn plotdata_emits_the_four_figure_inputs() {
    let f = Fixture::new();
    assert_eq!(code(&f.run("run", 3)), 0);
    assert_eq!(code(&f.sub(&["aggregate", "--in", "@run", "--group-by", "contentiousness", "--out", "@agg"])), 0);
    let o = f.sub(&["plotdata", "--in", "@agg", "--out", "@plots"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = fs::read_dir(f.path("plots")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    for expected in ["convergence_histogram.csv", "diversity_per_round.csv", "psychometrics_by_persona.csv", "moderator_comparison.csv"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    let hist = csv_rows(&f.path("plots/convergence_histogram.csv"));
    let all: usize = hist.iter().filter(|r| r["series"] == "all").map(|r| r["count"].parse::<usize>().unwrap()).sum();
    assert_eq!(all, 10);
    let grouped: usize = hist.iter().filter(|r| r["series"] != "all").map(|r| r["count"].parse::<usize>().unwrap()).sum();
    assert_eq!(grouped, 10);
    assert_eq!(csv_rows(&f.path("plots/diversity_per_round.csv")).len(), 3);
    let moderators = csv_rows(&f.path("plots/moderator_comparison.csv"));
    assert_eq!(moderators.iter().map(|r| r["count"].parse::<usize>().unwrap()).sum::<usize>(), 10);

    assert_eq!(code(&f.sub(&["plotdata", "--in", "@nothing", "--out", "@plots"])), 1);
}

#[test]
fn identical_arms_take_the_degenerate_branch() {
    let f = Fixture::new();
    let provider = f.scenario("funnel.json", &common::funneling_scenario(3));
    for (arm, moderator) in [("neutral", "neutral"), ("consensus", "consensus_builder")] {
        let o = f.sub(&[
            "run", "--topics", "@topics.jsonl", "--rounds", "3", "--debater-a", "contrarian debater", "--debater-b",
            "contrarian debater", "--moderator", moderator, "--provider", &provider, "--out", &format!("@{arm}"),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = f.sub(&["aggregate", "--in", "@neutral", "@consensus", "--group-by", "moderator", "--out", "@agg"]);
    assert_eq!(code(&o), 0);
    let levene = csv_rows(&f.path("agg/levene.csv"));
    assert_eq!(levene[0]["degenerate"], "true");
    assert_eq!(levene[0]["p_value"], "1");
    assert_eq!(levene[0]["w_statistic"], "0");
}

#[test]
fn rerunning_into_the_same_directory_is_idempotent() {
    let f = Fixture::new();
    assert_eq!(code(&f.run("run", 2)), 0);
    let before = files(&f.path("run"));
    assert_eq!(code(&f.run("run", 2)), 0);
    assert_eq!(before, files(&f.path("run")));
}
