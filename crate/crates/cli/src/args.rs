//! Command-line arguments. Every option is optional so a `--config` JSON
//! file can supply it; explicit flags win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "clone-commons", version, about = "Mine clone events from change histories and model team clone behaviour")]
pub struct Cli {
    /// JSON file with one object per subcommand, e.g. {"fit": {"chains": 2}}.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a change log, org charts and per-commit metrics into an event table.
    Ingest(IngestArgs),
    /// Scan a source checkout for duplicated blocks and complexity.
    Metrics(MetricsArgs),
    /// Fit a model with the built-in NUTS sampler.
    Fit(FitArgs),
    /// Rootogram and predictive checks for a fit.
    Diagnose(DiagnoseArgs),
    /// PSIS-LOO model comparison.
    Loo(LooArgs),
    /// Predictions for a change setting.
    Predict(PredictArgs),
    /// OCAM contribution metrics and ranks.
    Ocam(OcamArgs),
    /// Render a figure as SVG with its backing CSV.
    Report(ReportArgs),
    /// Simulate a dataset from known parameters.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Metrics(_) => "metrics",
            Command::Fit(_) => "fit",
            Command::Diagnose(_) => "diagnose",
            Command::Loo(_) => "loo",
            Command::Predict(_) => "predict",
            Command::Ocam(_) => "ocam",
            Command::Report(_) => "report",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    /// Change log: CSV contract or numstat-style text.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Org-chart snapshots (JSON).
    #[arg(long)]
    pub org_chart: Option<PathBuf>,
    /// Per-commit file metrics (CSV).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Events CSV to write [default: events.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsArgs {
    /// Root of the checked-out source tree.
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long)]
    pub repo: Option<String>,
    /// Commit hash the checkout corresponds to.
    #[arg(long)]
    pub hash: Option<String>,
    /// Normalized lines per duplicate window [default: 10].
    #[arg(long)]
    pub window: Option<usize>,
    /// File extensions to scan, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub extensions: Option<Vec<String>>,
    /// Metrics CSV to write [default: metrics.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Merge into an existing metrics CSV instead of replacing it.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub append: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// m0, m1, m2 or m3 [default: m0].
    #[arg(long)]
    pub model: Option<String>,
    /// Events CSV from `ingest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset JSON (with its matrix CSV alongside) instead of events.
    #[arg(long, conflicts_with = "data")]
    pub dataset: Option<PathBuf>,
    /// introduced or removed; m3 implies removed.
    #[arg(long)]
    pub outcome: Option<String>,
    /// committer or author [default: committer].
    #[arg(long)]
    pub attribution: Option<String>,
    /// Prior configuration JSON.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long)]
    pub max_treedepth: Option<usize>,
    #[arg(long)]
    pub max_energy_error: Option<f64>,
    #[arg(long)]
    pub init_radius: Option<f64>,
    /// Output directory [default: fit].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseArgs {
    /// Fit directory.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Largest count shown in the rootogram [default: 10].
    #[arg(long)]
    pub max_count: Option<u64>,
    /// Posterior draws used for predictive checks, thinned evenly [default: 1000].
    #[arg(long)]
    pub draws: Option<usize>,
    /// Also run prior predictive checks.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub prior: Option<bool>,
    /// Prior draws for prior predictive checks [default: 500].
    #[arg(long)]
    pub prior_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: <fit>/diagnostics].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LooArgs {
    /// Comma-separated models; `name` means `<fit-root>/name`, `name=dir` gives the directory.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Directory holding one fit directory per model [default: .].
    #[arg(long)]
    pub fit_root: Option<PathBuf>,
    /// Refit once per observation with Pareto-k above 0.7.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reloo: Option<bool>,
    /// Output directory [default: loo].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Request JSON {team, repo, add, rem, comp, dup, quantity}; flags override it.
    #[arg(long)]
    pub request: Option<PathBuf>,
    /// Team name, AVERAGE or NEW.
    #[arg(long)]
    pub team: Option<String>,
    #[arg(long)]
    pub repo: Option<String>,
    #[arg(long)]
    pub add: Option<f64>,
    #[arg(long)]
    pub rem: Option<f64>,
    #[arg(long)]
    pub comp: Option<f64>,
    #[arg(long)]
    pub dup: Option<f64>,
    /// prob, predict, cumulative or effects [default: prob].
    #[arg(long)]
    pub quantity: Option<String>,
    /// Predictor varied by `effects`: add, rem, comp or dup [default: comp].
    #[arg(long)]
    pub vary: Option<String>,
    /// Grid points for `effects` [default: 25].
    #[arg(long)]
    pub points: Option<usize>,
    /// Largest count for `cumulative` and `predict` tables [default: 20].
    #[arg(long)]
    pub max_count: Option<u64>,
    /// Simulated counts per draw for `predict` [default: 1].
    #[arg(long)]
    pub n_rep: Option<usize>,
    /// Central interval mass [default: 0.89].
    #[arg(long)]
    pub mass: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: predict].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcamArgs {
    /// Events CSV from `ingest`.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// committer or author [default: committer].
    #[arg(long)]
    pub attribution: Option<String>,
    /// Output CSV [default: ocam.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// rootogram, ppc, prior-quantiles, prob-at-least-one, cumulative,
    /// conditional-effects, ocam or loo.
    #[arg(long)]
    pub figure: Option<String>,
    /// Re-render from a backing CSV written by an earlier report.
    #[arg(long)]
    pub from_csv: Option<PathBuf>,
    /// Fit directory (prediction figures).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Diagnostics directory (rootogram, ppc, prior-quantiles).
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Upstream CSV for `ocam` (ocam.csv) or `loo` (comparison.csv).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Teams to facet, comma separated; names, AVERAGE or NEW [default: all teams and AVERAGE].
    #[arg(long, value_delimiter = ',')]
    pub teams: Option<Vec<String>>,
    /// Repositories, comma separated [default: all].
    #[arg(long, value_delimiter = ',')]
    pub repos: Option<Vec<String>>,
    #[arg(long)]
    pub add: Option<f64>,
    #[arg(long)]
    pub rem: Option<f64>,
    #[arg(long)]
    pub comp: Option<f64>,
    #[arg(long)]
    pub dup: Option<f64>,
    /// Statistic for `ppc`: prop_zero, q95 or q99 [default: prop_zero].
    #[arg(long)]
    pub stat: Option<String>,
    /// Predictor varied by `conditional-effects` [default: comp].
    #[arg(long)]
    pub vary: Option<String>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub max_count: Option<u64>,
    #[arg(long)]
    pub mass: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: report].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Model the data are drawn from [default: m0].
    #[arg(long)]
    pub model: Option<String>,
    /// JSON with the true parameters; a preset is used when absent.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub teams: Option<usize>,
    #[arg(long)]
    pub repos: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: sim].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Overlays explicitly given flags on the config file section.
pub fn merge_with_config<T: Serialize + DeserializeOwned>(args: &T, section: Option<&Value>) -> CliResult<T> {
    let mut base = match section {
        None => serde_json::Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(CliError::validation("config sections must be JSON objects")),
    };
    let given = serde_json::to_value(args).map_err(|e| CliError::runtime(e.to_string()))?;
    if let Value::Object(m) = given {
        for (k, v) in m {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::validation(format!("invalid configuration: {e}")))
}

pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::validation(format!("missing required option --{flag}")))
}
