//! `driftspc`: fit baselines, score items, chart drift, simulate step
//! shifts, extract image features and evaluate detections.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const SCHEMA_HELP: &str = "\
EMBEDDING FILES
  NDJSON: one object per line with fields
    id     string, required, unique within the file
    day    integer >= 0, optional (batch index)
    label  0 or 1, optional (1 = out-of-distribution)
    vec    array of JSON numbers, required; same length on every line
  CSV: header row `id[,day][,label],v0,v1,...,v{d-1}`; numbers in decimal or
    scientific notation.
  The format is taken from --format, or from the extension (.csv means CSV,
  anything else NDJSON).

EXIT STATUS
  0 success, 1 usage error, 2 data error.";

#[derive(Parser, Debug)]
#[command(name = "driftspc", version, about = "Out-of-distribution detection and drift monitoring with control charts", after_help = SCHEMA_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Fit an in-distribution baseline from training embeddings.
    #[command(after_help = SCHEMA_HELP)]
    Fit(FitArgs),
    /// Score embeddings against a baseline and flag items outside 3-sigma limits.
    #[command(after_help = SCHEMA_HELP)]
    Score(ScoreArgs),
    /// Chart a daily series (3-sigma or CUSUM) and export CSV/SVG.
    #[command(after_help = SCHEMA_HELP)]
    Monitor(MonitorArgs),
    /// Simulate a step increase in the daily OOD share and chart it.
    Simulate(SimulateArgs),
    /// Extract intensity-moment and GLCM texture features from grayscale images.
    Features(FeaturesArgs),
    /// Accuracy, sensitivity and specificity with bootstrap intervals.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Training embeddings (NDJSON or CSV).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// cosine or mahalanobis.
    #[arg(long, default_value = "cosine")]
    metric: String,
    /// Covariance ridge as a fraction of trace(S)/d.
    #[arg(long, default_value_t = driftspc_core::DEFAULT_LAMBDA_REL)]
    lambda_rel: f64,
    /// Baseline JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    baseline: PathBuf,
    /// Control-limit width in sigmas.
    #[arg(long, default_value_t = 3.0)]
    multiplier: f64,
    /// Score CSV `id,metric,value` (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flagged items as `id,value,side`.
    #[arg(long)]
    flags: Option<PathBuf>,
    /// Ground-truth table `id,label` taken from the input labels.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ChartArgs {
    /// three-sigma or cusum.
    #[arg(long, default_value = "cusum")]
    chart: String,
    /// CUSUM allowance in units of sigma.
    #[arg(long, conflicts_with = "k_abs")]
    k_rel: Option<f64>,
    /// CUSUM allowance in metric units.
    #[arg(long)]
    k_abs: Option<f64>,
    /// CUSUM decision interval in units of sigma.
    #[arg(long, conflicts_with = "h_abs")]
    h_rel: Option<f64>,
    /// CUSUM decision interval in metric units.
    #[arg(long)]
    h_abs: Option<f64>,
    /// Control-limit width in sigmas for the 3-sigma chart.
    #[arg(long, default_value_t = 3.0)]
    multiplier: f64,
    /// Restart the CUSUM sums after each signal.
    #[arg(long)]
    reset_on_flag: bool,
}

#[derive(Args, Debug)]
struct MonitorArgs {
    /// Item embeddings with a `day` field; scored and averaged per day.
    #[arg(long, conflicts_with = "series", required_unless_present = "series")]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    /// Daily series CSV with `day` and `value` columns (a chart CSV works).
    #[arg(long)]
    series: Option<PathBuf>,
    /// Baseline providing the control statistics (and the metric for --input).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Override the baseline mean of the metric.
    #[arg(long)]
    mu: Option<f64>,
    /// Override the baseline sigma of the metric.
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    chart: ChartArgs,
    /// Also report supplementary run-rule violations (experimental).
    #[arg(long)]
    run_rules: bool,
    /// Chart CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Day to mark on the SVG.
    #[arg(long)]
    shift_day: Option<u32>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 60)]
    days: u32,
    #[arg(long, default_value_t = 100)]
    per_day: u32,
    /// Defaults to days / 2.
    #[arg(long)]
    shift_day: Option<u32>,
    /// Pre-shift OOD share range `a:b`.
    #[arg(long, default_value = "0:0.01")]
    pre: String,
    /// Post-shift OOD share range `a:b`.
    #[arg(long, default_value = "0.03:0.05")]
    post: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "cosine")]
    metric: String,
    #[command(flatten)]
    chart: ChartArgs,
    /// Sigma for the daily chart: item (training sigma) or batch (sigma / sqrt(per-day)).
    #[arg(long, default_value = "item")]
    sigma_scope: String,
    /// synthetic or files.
    #[arg(long, default_value = "synthetic")]
    pools: String,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Distance between source means in standard deviations.
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 10_000)]
    n_train: usize,
    #[arg(long, default_value_t = 1_000)]
    pool_size: usize,
    /// Training embeddings (with --pools files).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    in_pool: Option<PathBuf>,
    #[arg(long)]
    ood_pool: Option<PathBuf>,
    #[arg(long, default_value_t = driftspc_core::DEFAULT_LAMBDA_REL)]
    lambda_rel: f64,
    /// Report JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    chart_csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Write the fitted baseline.
    #[arg(long)]
    baseline_out: Option<PathBuf>,
    /// Comma-separated allowances to sweep (same units as --k-rel/--k-abs).
    #[arg(long, value_delimiter = ',')]
    k_sweep: Vec<f64>,
    /// Sweep table CSV `k,delay,false_positives`.
    #[arg(long)]
    sweep_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    /// PGM (P5) images, or raw rasters with --raw-width/--raw-height.
    #[arg(long, num_args = 1.., required = true)]
    images: Vec<PathBuf>,
    /// zero-order, glcm or all.
    #[arg(long, default_value = "all")]
    kind: String,
    /// Grey levels for the co-occurrence matrix.
    #[arg(long, default_value_t = driftspc_core::features::DEFAULT_LEVELS)]
    levels: usize,
    #[arg(long, requires = "raw_height")]
    raw_width: Option<usize>,
    #[arg(long, requires = "raw_width")]
    raw_height: Option<usize>,
    /// Bits per raw sample (8, or up to 16 little-endian).
    #[arg(long, default_value_t = 8)]
    raw_depth: u32,
    /// Attach this ground-truth label (0 or 1) to every row.
    #[arg(long)]
    label: Option<u8>,
    /// Attach this day index to every row.
    #[arg(long)]
    day: Option<u32>,
    #[arg(long)]
    format: Option<String>,
    /// Feature file (stdout as CSV when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Flagged ids (CSV with an `id` column).
    #[arg(long)]
    flags: PathBuf,
    /// Ground truth CSV `id,label`.
    #[arg(long)]
    truth: PathBuf,
    /// accuracy, sensitivity, specificity or all.
    #[arg(long, default_value = "all")]
    stat: String,
    #[arg(long, default_value_t = 100)]
    n_boot: usize,
    #[arg(long, default_value_t = 500)]
    subset: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Score(a) => commands::score(a),
        Command::Monitor(a) => commands::monitor(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Features(a) => commands::features(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
