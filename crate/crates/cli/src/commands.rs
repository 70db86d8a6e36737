use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::DateTime;
use debatelab::exec::Execution;
use debatelab::metrics::compute_all;
use debatelab::model::{validate_config, DebateConfig, ModelRole, Topic};
use debatelab::orchestrator::{Clock, Orchestrator};
use debatelab::personas::{PersonaCatalog, BUNDLED_PERSONAS};
use debatelab::provider::{
    Gateway, HttpBackend, MockBackend, ModelBackend, ProviderConfig, ProviderSpec, SentimentEndpoint,
};
use debatelab::report::{build_report, ReportOptions};
use debatelab::store::{
    check_file_stems, load_transcript, read_aggregate, save_metrics, save_transcript, sha256_hex,
    write_aggregate, write_json, write_plot_data, AggregateFormat, RunDefaults, RunDir, RunManifest,
    SkipEntry, SkipReport, MANIFEST_SCHEMA,
};
use debatelab::templates::{PromptTemplateSet, BUNDLED_TEMPLATES};

use crate::{AggregateArgs, AnalyzeArgs, PlotdataArgs, RunArgs};

const EXIT_ABORTED: u8 = 2;

fn read_bytes(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {what} file {}", path.display()))
}

pub fn run(args: RunArgs, verbose: bool) -> Result<ExitCode> {
    let topic_bytes = read_bytes(&args.topics, "topic")?;
    let topic_text = String::from_utf8(topic_bytes.clone()).context("topic file is not UTF-8")?;
    let mut topics = Topic::parse_jsonl(&topic_text).with_context(|| format!("in {}", args.topics.display()))?;
    if let Some(limit) = args.limit {
        topics.truncate(limit);
    }
    check_file_stems(topics.iter().map(|t| t.id.as_str()))?;

    let mut hashes = BTreeMap::new();
    hashes.insert("topics".to_string(), sha256_hex(&topic_bytes));

    let catalog = match &args.personas {
        Some(path) => {
            let bytes = read_bytes(path, "persona")?;
            hashes.insert("personas".to_string(), sha256_hex(&bytes));
            PersonaCatalog::parse(std::str::from_utf8(&bytes).context("persona file is not UTF-8")?)?
        }
        None => {
            hashes.insert("personas".to_string(), sha256_hex(BUNDLED_PERSONAS.as_bytes()));
            PersonaCatalog::bundled()
        }
    };
    let templates = match &args.templates {
        Some(path) => PromptTemplateSet::from_file(path)?,
        None => PromptTemplateSet::parse(BUNDLED_TEMPLATES)?,
    };
    hashes.insert("templates".to_string(), templates.sha256().to_string());

    let debater_a = catalog.get(&args.debater_a)?.clone();
    let debater_b = catalog.get(&args.debater_b)?.clone();

    let spec = ProviderSpec::parse(&args.provider).map_err(anyhow::Error::msg)?;
    let (backend, clock): (Arc<dyn ModelBackend>, Clock) = match &spec {
        ProviderSpec::Mock(path) => {
            hashes.insert("scenario".to_string(), sha256_hex(&read_bytes(path, "scenario")?));
            // Mock runs are replayable, so they carry a fixed timestamp.
            (Arc::new(MockBackend::from_file(path)?), Clock::Fixed(DateTime::UNIX_EPOCH))
        }
        ProviderSpec::Http(url) => {
            let mut cfg = ProviderConfig::new(url.clone());
            cfg.api_key_env = args.http.api_key_env.clone();
            cfg.timeout_secs = args.http.timeout;
            cfg.max_retries = args.http.max_retries;
            cfg.backoff_base_secs = args.http.backoff_base;
            cfg.verbose = verbose;
            cfg.sentiment_instruction = templates.render("sentiment_instruction", &[])?;
            if let Some(url) = &args.http.sentiment_classifier {
                cfg.sentiment = SentimentEndpoint::Classifier { url: url.clone() };
            }
            if std::env::var_os(&cfg.api_key_env).is_none() {
                tracing::warn!("environment variable {} is not set; requests go out unauthenticated", cfg.api_key_env);
            }
            (Arc::new(HttpBackend::new(cfg)?), Clock::System)
        }
    };

    let model_ids: BTreeMap<ModelRole, String> = [
        (ModelRole::Debater, &args.models.debater_model),
        (ModelRole::Moderator, &args.models.moderator_model),
        (ModelRole::Embedding, &args.models.embedding_model),
        (ModelRole::Sentiment, &args.models.sentiment_model),
        (ModelRole::Bias, &args.models.bias_model),
    ]
    .into_iter()
    .map(|(role, id)| (role, id.clone()))
    .collect();

    let configs = topics
        .iter()
        .map(|topic| {
            Ok(DebateConfig {
                topic: topic.clone(),
                debater_a: debater_a.clone(),
                debater_b: debater_b.clone(),
                moderator: templates.moderator_spec(args.moderator.into(), &topic.text)?,
                rounds: args.rounds,
                temperature: args.temperature,
                max_tokens: args.max_tokens,
                model_ids: model_ids.clone(),
                seed: args.seed,
                stance_source: args.stance_source.into(),
                speaker_order: args.speaker_order.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = configs.first() {
        let violations = validate_config(first);
        if !violations.is_empty() {
            bail!("invalid configuration: {}", violations.join("; "));
        }
    }

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        run_id: String::new(),
        created_at: clock.now(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        provider: args.provider.clone(),
        seed: args.seed,
        defaults: RunDefaults {
            rounds: args.rounds,
            temperature: args.temperature,
            max_tokens: args.max_tokens,
            debater_a: debater_a.name.clone(),
            debater_b: debater_b.name.clone(),
            moderator: args.moderator.into(),
            stance_source: args.stance_source.into(),
            speaker_order: args.speaker_order.into(),
        },
        model_ids,
        input_hashes: hashes,
        topics: topics.iter().map(|t| t.id.clone()).collect(),
    }
    .sealed();

    let dir = RunDir::create(&args.out)?;
    let orchestrator = Orchestrator::new(Gateway::new(backend), Arc::new(templates)).with_clock(clock);
    tracing::info!(debates = configs.len(), parallel = args.parallel, "starting run {}", manifest.run_id);
    let transcripts = orchestrator.run_experiment(&configs, args.parallel as usize);

    let mut aborted = 0;
    for t in &transcripts {
        save_transcript(t, &dir.transcripts())?;
        if !t.is_complete() {
            aborted += 1;
            eprintln!(
                "debate {} aborted: {}",
                t.config.topic.id,
                t.abort_reason.as_deref().unwrap_or("unknown reason")
            );
        }
    }
    let metrics = compute_all(&transcripts, Execution::with_parallelism(args.parallel as usize));
    for (t, m) in transcripts.iter().zip(metrics) {
        match m {
            Ok(m) => {
                save_metrics(&m, &dir.metrics())?;
            }
            Err(e) if t.is_complete() => eprintln!("metrics for {} failed: {e}", t.config.topic.id),
            Err(_) => {}
        }
    }
    write_json(&dir.manifest(), &manifest)?;
    eprintln!(
        "{} debates: {} complete, {} aborted -> {}",
        transcripts.len(),
        transcripts.len() - aborted,
        aborted,
        args.out.display()
    );
    Ok(if aborted > 0 { ExitCode::from(EXIT_ABORTED) } else { ExitCode::SUCCESS })
}

pub fn analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    if !args.input.is_dir() {
        bail!("{} is not a readable directory", args.input.display());
    }
    let input = RunDir::new(&args.input);
    let files = input.list_transcripts()?;
    let mut skipped = Vec::new();
    let mut loaded = Vec::new();
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match load_transcript(path) {
            Ok(t) if t.is_complete() => loaded.push((name, t)),
            Ok(t) => skipped.push(SkipEntry {
                file: name,
                reason: format!("aborted: {}", t.abort_reason.as_deref().unwrap_or("unknown reason")),
            }),
            Err(e) => skipped.push(SkipEntry { file: name, reason: format!("schema error: {e}") }),
        }
    }

    let out = RunDir::create(&args.out)?;
    let transcripts: Vec<_> = loaded.iter().map(|(_, t)| t.clone()).collect();
    let results = compute_all(&transcripts, Execution::with_parallelism(args.parallel as usize));
    let mut written = 0;
    for ((name, _), result) in loaded.iter().zip(results) {
        match result {
            Ok(m) => {
                save_metrics(&m, &out.metrics())?;
                written += 1;
            }
            Err(e) => skipped.push(SkipEntry { file: name.clone(), reason: format!("metrics error: {e}") }),
        }
    }
    skipped.sort_by(|a, b| a.file.cmp(&b.file));
    write_json(&out.skipped(), &SkipReport { skipped: skipped.clone() })?;
    eprintln!("{} transcripts: {written} analyzed, {} skipped", files.len(), skipped.len());
    Ok(ExitCode::SUCCESS)
}

pub fn aggregate(args: AggregateArgs) -> Result<ExitCode> {
    let mut metrics = Vec::new();
    for dir in &args.input {
        let run = RunDir::new(dir);
        if !run.metrics().is_dir() {
            bail!("{} has no metrics/ directory; run `debatelab analyze` first", dir.display());
        }
        metrics.extend(run.load_metrics()?);
    }
    let opts = ReportOptions {
        group_by: args.group_by.map(Into::into),
        bins: args.bins as usize,
        center: args.center.into(),
        ..Default::default()
    };
    let report = build_report(&metrics, &opts)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    write_aggregate(&report, &args.out, AggregateFormat::Both)?;
    for row in &report.levene_results {
        eprintln!(
            "levene {} vs {}: W = {}, p = {}{}",
            row.group_a,
            row.group_b,
            row.w_statistic.map_or_else(|| "inf".to_string(), |w| format!("{w:.4}")),
            format_args!("{:.4}", row.p_value),
            if row.degenerate { " (degenerate)" } else { "" }
        );
    }
    eprintln!("{} debates aggregated -> {}", report.n_debates, args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn plotdata(args: PlotdataArgs) -> Result<ExitCode> {
    let report = read_aggregate(&args.input)
        .with_context(|| format!("no readable aggregate in {}", args.input.display()))?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let files = write_plot_data(&report, &args.out)?;
    eprintln!("{} plot-data files -> {}", files.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
