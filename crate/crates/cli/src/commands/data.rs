//! Commands that move tables around without sampling.

use std::io::Write;
use std::path::PathBuf;

use log::warn;
use serde::Serialize;
use serde_json::Value;

use clone_commons_core::clones::{scan_tree, DEFAULT_EXTENSIONS, DEFAULT_WINDOW};
use clone_commons_core::ingest::{
    derive_events, parse_change_log, parse_metrics_csv, parse_org_charts, read_events_csv, write_events_csv,
    write_metrics_csv,
};
use clone_commons_core::ocam::{ocam_metrics, ocam_rank};
use clone_commons_core::model::ModelKind;
use clone_commons_core::predict::{simulate_dataset, SimulationDesign, TrueParameters};

use super::{attribution, model_kind, write_dataset};
use crate::args::{merge_with_config, required, IngestArgs, MetricsArgs, OcamArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

#[derive(Serialize)]
struct IngestSettings {
    log: PathBuf,
    org_chart: PathBuf,
    metrics: PathBuf,
    out: PathBuf,
}

pub fn ingest(args: &IngestArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let s = IngestSettings {
        log: required(&a.log, "log")?,
        org_chart: required(&a.org_chart, "org-chart")?,
        metrics: required(&a.metrics, "metrics")?,
        out: a.out.unwrap_or_else(|| "events.csv".into()),
    };
    let mut run = Run::new("ingest", &s, None)?;
    let log = parse_change_log(&run.read_string(&s.log)?)?;
    for w in &log.warnings {
        warn!("{w}");
    }
    let charts = parse_org_charts(&run.read_string(&s.org_chart)?)?;
    let metrics = parse_metrics_csv(run.read(&s.metrics)?.as_slice())?;
    let events = derive_events(&log.commits, &metrics, &charts)?;
    run.write_csv_with(&s.out, |buf| write_events_csv(&events, buf))?;
    writeln!(out, "{} events from {} commits -> {}", events.len(), log.commits.len(), s.out.display())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsSettings {
    root: PathBuf,
    repo: String,
    hash: String,
    window: usize,
    extensions: Vec<String>,
    out: PathBuf,
    append: bool,
}

pub fn metrics(args: &MetricsArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let s = MetricsSettings {
        root: required(&a.root, "root")?,
        repo: required(&a.repo, "repo")?,
        hash: required(&a.hash, "hash")?,
        window: a.window.unwrap_or(DEFAULT_WINDOW),
        extensions: a.extensions.unwrap_or_else(|| DEFAULT_EXTENSIONS.iter().map(|e| e.to_string()).collect()),
        out: a.out.unwrap_or_else(|| "metrics.csv".into()),
        append: a.append.unwrap_or(false),
    };
    if s.window == 0 {
        return Err(CliError::validation("--window must be at least 1"));
    }
    if !s.root.is_dir() {
        return Err(CliError::validation(format!("source root {} is not a directory", s.root.display())));
    }
    let mut run = Run::new("metrics", &s, None)?;
    let snapshot = scan_tree(&s.root, &s.repo, &s.hash, s.window, &s.extensions)?;
    let mut snapshots = if s.append && s.out.exists() {
        parse_metrics_csv(run.read(&s.out)?.as_slice())?
    } else {
        Vec::new()
    };
    let files = snapshot.per_file.len();
    match snapshots.iter_mut().find(|x| x.repo == s.repo && x.hash == s.hash) {
        Some(existing) => *existing = snapshot,
        None => snapshots.push(snapshot),
    }
    run.write_csv_with(&s.out, |buf| write_metrics_csv(&snapshots, buf))?;
    writeln!(out, "{files} files scanned for {}@{} -> {}", s.repo, s.hash, s.out.display())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}

#[derive(Serialize)]
struct OcamSettings {
    events: PathBuf,
    attribution: String,
    out: PathBuf,
}

pub fn ocam(args: &OcamArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let attr = attribution(a.attribution.as_deref())?;
    let s = OcamSettings {
        events: required(&a.events, "events")?,
        attribution: format!("{attr:?}").to_lowercase(),
        out: a.out.unwrap_or_else(|| "ocam.csv".into()),
    };
    let mut run = Run::new("ocam", &s, None)?;
    let events = read_events_csv(run.read(&s.events)?.as_slice())?;
    let table = ocam_rank(&ocam_metrics(&events, attr));
    run.write_csv_with(&s.out, |buf| table.write_csv(buf))?;
    writeln!(out, "{} team/repository rows -> {}", table.rows.len(), s.out.display())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateSettings {
    model: ModelKind,
    truth: TrueParameters,
    truth_file: Option<PathBuf>,
    teams: usize,
    repos: usize,
    n: usize,
    seed: u64,
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct TruthArtifact<'a> {
    truth: &'a TrueParameters,
    parameters: Vec<NamedValue>,
}

#[derive(Serialize)]
struct NamedValue {
    name: String,
    value: f64,
}

pub fn simulate(args: &SimulateArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let kind = model_kind(a.model.as_deref())?;
    let mut pre = Run::new("simulate", &Value::Null, None)?;
    let truth = match &a.truth {
        Some(p) => {
            let t: TrueParameters = serde_json::from_slice(&pre.read(p)?)?;
            if t.kind != kind && a.model.is_some() {
                return Err(CliError::validation(format!("truth file is for {}, not {kind}", t.kind)));
            }
            t
        }
        None => TrueParameters::preset(kind),
    };
    let s = SimulateSettings {
        model: truth.kind,
        truth: truth.clone(),
        truth_file: a.truth.clone(),
        teams: a.teams.unwrap_or(5),
        repos: a.repos.unwrap_or(4),
        n: a.n.unwrap_or(5000),
        seed: a.seed.unwrap_or(42),
        out_dir: a.out_dir.unwrap_or_else(|| "sim".into()),
    };
    let mut run = Run::new("simulate", &s, Some(s.seed))?;
    run.manifest.inputs = pre.manifest.inputs;
    let sim = simulate_dataset(&truth, SimulationDesign { teams: s.teams, repos: s.repos, n: s.n }, s.seed)?;
    write_dataset(&mut run, &s.out_dir.join("dataset.json"), &sim.dataset)?;
    let parameters = sim
        .layout
        .constrained_names()
        .into_iter()
        .zip(&sim.truth_constrained)
        .map(|(name, &value)| NamedValue { name, value })
        .collect();
    run.write_json(&s.out_dir.join("truth.json"), &TruthArtifact { truth: &truth, parameters })?;
    writeln!(out, "{} observations from {} -> {}", sim.dataset.len(), truth.kind, s.out_dir.display())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}
