mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use debatelab::model::{GroupBy, ModeratorStyle, SpeakerOrder, StanceSource, DEFAULT_TEMPERATURE};
use debatelab::stats::Center;
use tracing_subscriber::EnvFilter;

/// Run LLM-vs-LLM debates and analyze their dynamics.
#[derive(Debug, Parser)]
#[command(name = "debatelab", version)]
struct Cli {
    /// Log provider traffic and per-debate progress (API keys are redacted).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one debate per topic and write transcripts and per-debate metrics.
    Run(Box<RunArgs>),
    /// Compute per-debate metrics for every transcript in a run directory.
    Analyze(AnalyzeArgs),
    /// Combine analyzed runs into distribution statistics and group comparisons.
    Aggregate(AggregateArgs),
    /// Emit the figure input CSVs from an aggregate directory.
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeratorArg {
    Neutral,
    #[value(name = "consensus_builder", alias = "consensus-builder")]
    ConsensusBuilder,
}

impl From<ModeratorArg> for ModeratorStyle {
    fn from(m: ModeratorArg) -> Self {
        match m {
            ModeratorArg::Neutral => ModeratorStyle::Neutral,
            ModeratorArg::ConsensusBuilder => ModeratorStyle::ConsensusBuilder,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StanceArg {
    Elicited,
    Argument,
}

impl From<StanceArg> for StanceSource {
    fn from(s: StanceArg) -> Self {
        match s {
            StanceArg::Elicited => StanceSource::Elicited,
            StanceArg::Argument => StanceSource::Argument,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    AFirst,
    Alternate,
}

impl From<OrderArg> for SpeakerOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::AFirst => SpeakerOrder::AFirst,
            OrderArg::Alternate => SpeakerOrder::Alternate,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Topic file: one JSON object per line with id, text, source, contentiousness.
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    rounds: u32,
    /// Persona name for debater A.
    #[arg(long)]
    debater_a: String,
    /// Persona name for debater B.
    #[arg(long)]
    debater_b: String,
    #[arg(long, value_enum)]
    moderator: ModeratorArg,
    /// OpenAI-compatible base URL, or mock:<scenario.json>.
    #[arg(long)]
    provider: String,
    #[arg(long)]
    out: PathBuf,
    /// Debates run concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallel: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Use only the first N topics.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    /// Persona file overriding the bundled personas.
    #[arg(long)]
    personas: Option<PathBuf>,
    /// Prompt template file overriding the bundled templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "elicited")]
    stance_source: StanceArg,
    #[arg(long, value_enum, default_value = "a-first")]
    speaker_order: OrderArg,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    http: HttpArgs,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value = "meta-llama/Llama-3.2-3B-Instruct")]
    debater_model: String,
    #[arg(long, default_value = "meta-llama/Llama-3.2-3B-Instruct")]
    moderator_model: String,
    #[arg(long, default_value = "sentence-transformers/all-MiniLM-L6-v2")]
    embedding_model: String,
    #[arg(long, default_value = "cardiffnlp/twitter-roberta-base-sentiment-latest")]
    sentiment_model: String,
    #[arg(long, default_value = "bias-expert")]
    bias_model: String,
}

#[derive(Debug, Args)]
struct HttpArgs {
    /// Environment variable holding the API key.
    #[arg(long, default_value = "HF_TOKEN")]
    api_key_env: String,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    /// First retry delay in seconds; doubles on each retry.
    #[arg(long, default_value_t = 1.0)]
    backoff_base: f64,
    /// Text-classification endpoint for sentiment; by default the sentiment
    /// model is asked through the chat route.
    #[arg(long)]
    sentiment_classifier: Option<String>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run directory containing transcripts/.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallel: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GroupArg {
    Contentiousness,
    Moderator,
    Persona,
    Rounds,
}

impl From<GroupArg> for GroupBy {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Contentiousness => GroupBy::Contentiousness,
            GroupArg::Moderator => GroupBy::Moderator,
            GroupArg::Persona => GroupBy::Persona,
            GroupArg::Rounds => GroupBy::Rounds,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CenterArg {
    Mean,
    Median,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Analyzed directories (each containing metrics/).
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum)]
    group_by: Option<GroupArg>,
    #[arg(long)]
    out: PathBuf,
    /// Histogram bins over [-1, 1].
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u32).range(1..))]
    bins: u32,
    /// Center for the variance test: mean (Levene) or median (Brown-Forsythe).
    #[arg(long, value_enum, default_value = "mean")]
    center: CenterArg,
}

impl From<CenterArg> for Center {
    fn from(c: CenterArg) -> Self {
        match c {
            CenterArg::Mean => Center::Mean,
            CenterArg::Median => Center::Median,
        }
    }
}

#[derive(Debug, Args)]
struct PlotdataArgs {
    /// Aggregate directory containing aggregate.json.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn init_tracing(verbose: bool) {
    let default = if verbose { "debatelab=debug,info" } else { "warn" };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_tracing(cli.verbose);
    let result = match cli.command {
        Command::Run(args) => commands::run(*args, cli.verbose),
        Command::Analyze(args) => commands::analyze(args),
        Command::Aggregate(args) => commands::aggregate(args),
        Command::Plotdata(args) => commands::plotdata(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
