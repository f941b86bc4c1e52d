//! Command-line front end: `detect`, `analyze` and `gate`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::anomaly::{density_series, latest_transition_flags, AnomalyError, Thresholds};
use crate::ingest::{load_manifest_file, IngestOptions};
use crate::report::{self, round_sig, AnalyzeConfig, Formats};
use crate::rules::{evaluate_rules, CodeModel, RuleSet};
use crate::tracking::TrackingOptions;

pub const EXIT_OK: i32 = 0;
/// `gate` found an increase flag on the latest transition.
pub const EXIT_GATE_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_INSUFFICIENT_HISTORY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "smellscope", version, about = "Code smell survival and density anomaly analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the smell rules on one code-model file.
    Detect(DetectArgs),
    /// Track smell instances across a manifest and write the report bundle.
    Analyze(AnalyzeArgs),
    /// Exit non-zero when the latest version raises smell density past a threshold.
    Gate(GateArgs),
}

#[derive(Debug, Args)]
pub struct PathArgs {
    /// Threshold overrides as a JSON object, e.g. {"ExcessiveMethodLength": 80}.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Leading path stripped from report file names.
    #[arg(long)]
    pub strip_prefix: Option<String>,
    /// Drop occurrences under this path prefix (repeatable).
    #[arg(long = "exclude")]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub up: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub up2: f64,
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    pub down: f64,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Thresholds {
        Thresholds {
            up: self.up,
            up2: self.up2,
            down: self.down,
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub code_model: PathBuf,
    /// Version id stamped on the occurrences; defaults to the file stem.
    #[arg(long = "version-id")]
    pub version_id: Option<String>,
    /// Write `occurrences.json` here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub paths: PathArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csv,json")]
    pub formats: String,
    #[arg(long, default_value_t = 0)]
    pub gap_tolerance: usize,
    #[arg(long)]
    pub rename_heuristic: bool,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub paths: PathArgs,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub paths: PathArgs,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
    code: i32,
}

impl Failure {
    fn new(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Failure {
            kind,
            message: e.to_string(),
            code: EXIT_ERROR,
        }
    }
}

fn ingest_options(paths: &PathArgs) -> Result<IngestOptions, Failure> {
    let rules = match &paths.rules {
        Some(p) => RuleSet::load(p).map_err(|e| Failure::new("config", e))?,
        None => RuleSet::default(),
    };
    Ok(IngestOptions {
        strip_prefix: paths.strip_prefix.clone(),
        exclude_prefixes: paths.exclude.clone(),
        rules,
    })
}

/// Parses `args` and runs the subcommand, returning the process exit code.
/// Errors are written to `stderr` as one JSON line.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = writeln!(stderr, "{}", json!({"error": "usage", "message": rendered.trim()}));
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Detect(a) => detect(a, stdout),
        Command::Analyze(a) => analyze(a),
        Command::Gate(a) => gate(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "{}", json!({"error": f.kind, "message": f.message}));
            f.code
        }
    }
}

fn detect(args: &DetectArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let options = ingest_options(&args.paths)?;
    let model = CodeModel::load(&args.code_model).map_err(|e| Failure::new("input", e))?;
    let version_id = args.version_id.clone().unwrap_or_else(|| {
        args.code_model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let mut entities = model.entities;
    for e in &mut entities {
        e.file = options.normalize_path(&e.file);
    }
    let occurrences = evaluate_rules(&entities, &options.rules, &version_id);
    let mut doc = serde_json::to_string_pretty(&json!({
        "version_id": version_id,
        "occurrences": occurrences,
    }))
    .expect("occurrences serialize");
    doc.push('\n');
    match &args.out {
        Some(dir) => report::write_atomic(&dir.join("occurrences.json"), doc.as_bytes()).map_err(|e| Failure::new("io", e))?,
        None => stdout.write_all(doc.as_bytes()).map_err(|e| Failure::new("io", e))?,
    }
    Ok(EXIT_OK)
}

fn analyze(args: &AnalyzeArgs) -> Result<i32, Failure> {
    let formats: Formats = args.formats.parse().map_err(|e| Failure::new("config", e))?;
    let options = ingest_options(&args.paths)?;
    let histories = load_manifest_file(&args.manifest, &options).map_err(|e| Failure::new("ingest", e))?;
    let config = AnalyzeConfig {
        tracking: TrackingOptions {
            gap_tolerance: args.gap_tolerance,
            rename_heuristic: args.rename_heuristic,
        },
        thresholds: args.thresholds.thresholds(),
        formats,
    };
    let bundle = report::analyze(&histories, &config).map_err(|e| match e {
        report::ReportError::InsufficientHistory { .. } => Failure {
            kind: "insufficient_history",
            message: e.to_string(),
            code: EXIT_INSUFFICIENT_HISTORY,
        },
        other => Failure::new("analysis", other),
    })?;
    bundle.write_to(&args.out).map_err(|e| Failure::new("io", e))?;
    Ok(EXIT_OK)
}

fn gate(args: &GateArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let options = ingest_options(&args.paths)?;
    let thresholds = args.thresholds.thresholds();
    thresholds.validate().map_err(|e| Failure::new("config", e))?;
    let histories = load_manifest_file(&args.manifest, &options).map_err(|e| Failure::new("ingest", e))?;
    if histories.is_empty() {
        return Err(Failure {
            kind: "insufficient_history",
            message: "manifest lists no versions".into(),
            code: EXIT_INSUFFICIENT_HISTORY,
        });
    }
    let mut failed = false;
    for h in &histories {
        let flags = latest_transition_flags(h, &thresholds).map_err(|e| match e {
            AnomalyError::InsufficientHistory(_) => Failure {
                kind: "insufficient_history",
                message: format!("app `{}`: {e}", h.app_name()),
                code: EXIT_INSUFFICIENT_HISTORY,
            },
            other => Failure::new("analysis", other),
        })?;
        let series = density_series(h);
        let last = series.last().expect("at least two versions");
        let app_failed = flags.iter().any(|f| f.kind.is_increase());
        failed |= app_failed;
        let flags: Vec<_> = flags
            .iter()
            .map(|f| json!({"kind": f.kind.as_str(), "delta_rho": round_sig(f.delta_rho)}))
            .collect();
        let line = json!({
            "app": h.app_name(),
            "version": last.version_id,
            "delta_rho": last.delta_rho.map(round_sig),
            "flags": flags,
            "status": if app_failed { "fail" } else { "pass" },
        });
        writeln!(stdout, "{line}").map_err(|e| Failure::new("io", e))?;
    }
    Ok(if failed { EXIT_GATE_FAILED } else { EXIT_OK })
}
