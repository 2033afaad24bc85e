use std::io::Write;
use std::path::PathBuf;

use log::info;
use serde::Serialize;
use serde_json::Value;

use clone_commons_core::diagnostics::{
    compare_models, format_comparison, model_loo, refit_without, reloo, ComparisonRow, LooResult, RefitReport,
};

use super::load_fit;
use crate::args::{merge_with_config, required, LooArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

#[derive(Serialize)]
struct LooSettings {
    models: Vec<ModelEntry>,
    reloo: bool,
    out_dir: PathBuf,
}

#[derive(Serialize, Clone)]
struct ModelEntry {
    name: String,
    dir: PathBuf,
}

#[derive(Serialize)]
struct ModelLoo {
    name: String,
    dir: PathBuf,
    loo: LooResult,
    refits: Vec<RefitReport>,
}

#[derive(Serialize)]
struct LooArtifact {
    models: Vec<ModelLoo>,
    comparison: Vec<ComparisonRow>,
}

fn entries(models: &[String], root: &std::path::Path) -> CliResult<Vec<ModelEntry>> {
    if models.is_empty() {
        return Err(CliError::validation("--models needs at least one model"));
    }
    let mut out: Vec<ModelEntry> = Vec::new();
    for m in models {
        let (name, dir) = match m.split_once('=') {
            Some((n, d)) => (n.to_string(), PathBuf::from(d)),
            None => (m.clone(), root.join(m)),
        };
        if name.is_empty() {
            return Err(CliError::validation(format!("empty model name in {m:?}")));
        }
        if out.iter().any(|e| e.name == name) {
            return Err(CliError::validation(format!("model {name} listed twice")));
        }
        out.push(ModelEntry { name, dir });
    }
    Ok(out)
}

pub fn loo(args: &LooArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let root = a.fit_root.clone().unwrap_or_else(|| ".".into());
    let s = LooSettings {
        models: entries(&required(&a.models, "models")?, &root)?,
        reloo: a.reloo.unwrap_or(false),
        out_dir: a.out_dir.clone().unwrap_or_else(|| "loo".into()),
    };
    let mut run = Run::new("loo", &s, None)?;
    let mut results = Vec::new();
    let mut reference: Option<Vec<u64>> = None;
    for e in &s.models {
        let fit = load_fit(&mut run, &e.dir)?;
        let y = fit.dataset.outcomes();
        match &reference {
            None => reference = Some(y),
            Some(r) if *r != y => {
                return Err(CliError::validation(format!(
                    "model {} was fitted to different observations than {}",
                    e.name, s.models[0].name
                )))
            }
            Some(_) => {}
        }
        let loo = model_loo(&fit.draws(), &fit.dataset, &fit.spec)?;
        let (loo, refits) = if s.reloo && !loo.flagged.is_empty() {
            info!("{}: refitting {} flagged observations", e.name, loo.flagged.len());
            let flagged = loo.flagged.clone();
            let cfg = fit.meta.chain_config;
            let r = reloo(&loo, &flagged, |i| refit_without(&fit.dataset, &fit.spec, &cfg, i))?;
            (r.loo, r.refits)
        } else {
            (loo, Vec::new())
        };
        results.push(ModelLoo { name: e.name.clone(), dir: e.dir.clone(), loo, refits });
    }
    let pairs: Vec<(&str, &LooResult)> = results.iter().map(|m| (m.name.as_str(), &m.loo)).collect();
    let comparison = compare_models(&pairs)?;

    for m in &results {
        let path = s.out_dir.join(format!("pointwise_{}.csv", m.name));
        run.write_csv_with(&path, |buf| m.loo.write_pointwise_csv(buf))?;
    }
    run.write_csv_with(&s.out_dir.join("comparison.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in &comparison {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let table = format_comparison(&comparison);
    let artifact = LooArtifact { models: results, comparison };
    run.write_json(&s.out_dir.join("loo.json"), &artifact)?;

    let io = |e: std::io::Error| CliError::runtime(e.to_string());
    write!(out, "{table}").map_err(io)?;
    for m in &artifact.models {
        let k = m.loo.flagged.len();
        if k > 0 {
            writeln!(out, "{}: {k} observations with Pareto k > 0.7", m.name).map_err(io)?;
        }
        for r in &m.refits {
            if !r.converged {
                writeln!(out, "{}: refit without observation {} did not converge (R-hat {:.3})", m.name, r.index, r.max_rhat)
                    .map_err(io)?;
            }
        }
    }
    Ok(())
}
