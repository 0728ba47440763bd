//! The `harmony` command-line tool.
//!
//! Subcommands follow the workflow: `analyze` compares two corpora, `harmonize`
//! rewrites a corpus to the target standard, `evaluate` scores structured
//! documents, `repgeom` measures embedding geometry and `scatter` renders the
//! projected points. Every run writes `run_manifest.json` into its output
//! directory, and a failed run also writes `error.json` there.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod manifest;

use config::{FileConfig, FlagValues, ProcessEnv, Resolved};

const PRECEDENCE_HELP: &str = "\
Settings are resolved as: command-line flags, then the --config TOML file, then \
environment variables (HARMONIZER_WORKERS, HARMONIZER_POLICY, HARMONIZER_LOG, HARMONIZER_SEED, \
HARMONIZER_VLM_ENDPOINT, HARMONIZER_VLM_MODEL), then built-in defaults. The VLM API key is read \
from the variable named by api_key_env (default HARMONIZER_VLM_API_KEY).

Exit codes: 0 success, 1 usage error, 2 data error, 3 agent failure under --policy fail_job.";

#[derive(Debug, Parser)]
#[command(name = "harmony", version, about = "Layout annotation harmonization toolkit", after_help = PRECEDENCE_HELP)]
pub struct Cli {
    /// TOML file with default settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `harmony_core=debug`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare class distributions and box geometry of two COCO corpora.
    Analyze(AnalyzeArgs),
    /// Rewrite a COCO corpus to the target annotation standard.
    Harmonize(HarmonizeArgs),
    /// Score predicted documents against references.
    Evaluate(EvaluateArgs),
    /// Silhouette, neighborhood purity and 2D projection of embeddings.
    Repgeom(RepgeomArgs),
    /// Render a geometry report as an SVG scatter plot.
    Scatter(ScatterArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Corpus A and corpus B. Ratios are reported as A over B.
    #[arg(long, num_args = 2, value_names = ["A", "B"], required = true)]
    pub inputs: Vec<PathBuf>,
    /// Category correspondence from B's names to A's: a mapping file or builtin name.
    #[arg(long)]
    pub map: Option<String>,
    /// Measure boxes as fractions of their page size.
    #[arg(long)]
    pub normalize_by_page: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AgentKind {
    Rule,
    Vlm,
}

#[derive(Debug, Args)]
pub struct HarmonizeArgs {
    /// COCO annotation file.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory holding the page images named by `file_name`.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Rule set JSON; the bundled rules are used when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Source-to-target mapping: a file or builtin name. Defaults to identity.
    #[arg(long)]
    pub mapping: Option<String>,
    #[arg(long, value_enum, default_value = "rule")]
    pub agent: AgentKind,
    /// fail_job, identity_page or retry_<n>_then_identity.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted documents (.jsonl structured documents or COCO .json).
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference documents, same formats.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = 2)]
    pub shift_window: i64,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RepgeomArgs {
    /// JSONL rows `{id, page_id, label, vector, x?, y?}`.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Label mapping applied before analysis: a file or builtin name.
    #[arg(long)]
    pub remap: Option<String>,
    /// Keep at most this many records per class.
    #[arg(long)]
    pub sample_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    /// geometry_report.json written by `repgeom`.
    #[arg(long)]
    pub geometry: PathBuf,
    /// SVG file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Agent(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Agent(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Agent(_) => "agent",
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Harmonize(_) => "harmonize",
            Command::Evaluate(_) => "evaluate",
            Command::Repgeom(_) => "repgeom",
            Command::Scatter(_) => "scatter",
        }
    }

    /// Directory receiving the run's outputs, manifest and error record.
    pub fn out_dir(&self) -> PathBuf {
        match self {
            Command::Analyze(a) => a.out.clone(),
            Command::Harmonize(a) => a.out.clone(),
            Command::Evaluate(a) => a.out.clone(),
            Command::Repgeom(a) => a.out.clone(),
            Command::Scatter(a) => match a.out.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            },
        }
    }

    fn flag_values(&self, cli: &Cli) -> FlagValues {
        let mut f = FlagValues {
            log_level: cli.log_level.clone(),
            ..FlagValues::default()
        };
        match self {
            Command::Harmonize(a) => {
                f.workers = a.workers;
                f.policy = a.policy.clone();
                f.endpoint = a.endpoint.clone();
                f.model = a.model.clone();
                f.max_retries = a.max_retries;
                f.max_concurrency = a.max_concurrency;
                f.timeout_secs = a.timeout_secs;
            }
            Command::Evaluate(a) => f.workers = a.workers,
            Command::Repgeom(a) => {
                f.workers = a.workers;
                f.seed = a.seed;
            }
            Command::Analyze(_) | Command::Scatter(_) => {}
        }
        f
    }
}

fn write_error(dir: &Path, err: &CliError) {
    let record = json!({
        "exit_code": err.exit_code(),
        "kind": err.kind(),
        "message": err.to_string(),
    });
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(dir.join("error.json"), format!("{:#}\n", record));
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn execute(cli: &Cli, resolved: &Resolved) -> Result<(), CliError> {
    let out = cli.command.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let stale = out.join("error.json");
    if stale.exists() {
        let _ = std::fs::remove_file(stale);
    }
    let (config, inputs) = commands::describe(&cli.command, resolved);
    manifest::write(&out, cli.command.name(), &config, &inputs)?;
    match &cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Harmonize(a) => commands::harmonize(a, resolved),
        Command::Evaluate(a) => commands::evaluate(a, resolved),
        Command::Repgeom(a) => commands::repgeom(a, resolved),
        Command::Scatter(a) => commands::scatter(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let out = cli.command.out_dir();
    let resolved = config::load_file(cli.config.as_ref())
        .and_then(|file: FileConfig| config::resolve(&cli.command.flag_values(&cli), &file, &ProcessEnv));
    let result = resolved.and_then(|r| {
        init_logging(&r.log_level);
        execute(&cli, &r)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("harmony {}: {e}", cli.command.name());
            write_error(&out, &e);
            e.exit_code()
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_text(value: &impl serde::Serialize) -> String {
    let v: Value = serde_json::to_value(value).expect("outputs serialize");
    format!("{v:#}\n")
}
