use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use clone_commons_core::diagnostics::{ppc_stat, rootogram, PpcResult, PpcStatistic, RootogramData};
use clone_commons_core::model::{sample_prior_with, ParameterLayout};
use clone_commons_core::predict::replicate_outcomes;

use super::load_fit;
use crate::args::{merge_with_config, required, DiagnoseArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

const STATS: [PpcStatistic; 3] = [PpcStatistic::PropZero, PpcStatistic::Q95, PpcStatistic::Q99];

#[derive(Serialize)]
struct DiagnoseSettings {
    fit: PathBuf,
    max_count: u64,
    draws: usize,
    prior: bool,
    prior_draws: usize,
    seed: u64,
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct StatSummary {
    statistic: PpcStatistic,
    observed: f64,
    median: f64,
    lower: f64,
    upper: f64,
    mass: f64,
    covered: bool,
}

impl From<&PpcResult> for StatSummary {
    fn from(r: &PpcResult) -> Self {
        StatSummary {
            statistic: r.statistic,
            observed: r.observed,
            median: r.median,
            lower: r.lower,
            upper: r.upper,
            mass: r.mass,
            covered: r.lower <= r.observed && r.observed <= r.upper,
        }
    }
}

#[derive(Serialize)]
struct PpcArtifact {
    kind: &'static str,
    n_draws: usize,
    statistics: Vec<StatSummary>,
}

/// Evenly spaced subset of `n` indices out of `total`.
pub(crate) fn thin(total: usize, n: usize) -> Vec<usize> {
    if n >= total {
        return (0..total).collect();
    }
    (0..n).map(|i| i * total / n).collect()
}

fn write_stat_draws(run: &mut Run, path: &Path, results: &[PpcResult]) -> CliResult<()> {
    run.write_csv_with(path, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["draw".to_string()];
        header.extend(results.iter().map(|r| r.statistic.name().to_string()));
        w.write_record(&header)?;
        for d in 0..results[0].draws.len() {
            let mut row = vec![d.to_string()];
            row.extend(results.iter().map(|r| r.draws[d].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })
}

pub(crate) fn write_rootogram_csv(buf: &mut Vec<u8>, r: &RootogramData) -> clone_commons_core::Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record([
        "count",
        "observed",
        "expected",
        "lower",
        "upper",
        "sqrt_observed",
        "sqrt_expected",
        "sqrt_lower",
        "sqrt_upper",
        "deviation",
    ])?;
    for b in &r.bins {
        w.write_record([
            b.count.to_string(),
            b.observed.to_string(),
            b.expected.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            b.sqrt_observed.to_string(),
            b.sqrt_expected.to_string(),
            b.sqrt_lower.to_string(),
            b.sqrt_upper.to_string(),
            b.deviation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn prior_draws(layout: &ParameterLayout, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            sample_prior_with(layout, &mut rng)
        })
        .collect()
}

pub fn diagnose(args: &DiagnoseArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let fit_dir = required(&a.fit, "fit")?;
    let s = DiagnoseSettings {
        max_count: a.max_count.unwrap_or(10),
        draws: a.draws.unwrap_or(1000),
        prior: a.prior.unwrap_or(false),
        prior_draws: a.prior_draws.unwrap_or(500),
        seed: a.seed.unwrap_or(42),
        out_dir: a.out_dir.clone().unwrap_or_else(|| fit_dir.join("diagnostics")),
        fit: fit_dir,
    };
    if s.draws == 0 || s.prior_draws == 0 {
        return Err(CliError::validation("--draws and --prior-draws must be positive"));
    }
    let mut run = Run::new("diagnose", &s, Some(s.seed))?;
    let fit = load_fit(&mut run, &s.fit)?;
    let all = fit.draws();
    let draws: Vec<Vec<f64>> = thin(all.len(), s.draws).into_iter().map(|i| all[i].clone()).collect();
    let observed = fit.dataset.outcomes();
    let predictive = replicate_outcomes(&draws, &fit.layout, &fit.dataset, s.seed)?;

    let root = rootogram(&observed, &predictive, s.max_count)?;
    run.write_json(&s.out_dir.join("rootogram.json"), &root)?;
    run.write_csv_with(&s.out_dir.join("rootogram.csv"), |buf| write_rootogram_csv(buf, &root))?;

    let results = STATS
        .iter()
        .map(|&st| ppc_stat(&observed, &predictive, st))
        .collect::<clone_commons_core::Result<Vec<_>>>()?;
    write_stat_draws(&mut run, &s.out_dir.join("ppc_draws.csv"), &results)?;
    let artifact = PpcArtifact {
        kind: "posterior",
        n_draws: draws.len(),
        statistics: results.iter().map(StatSummary::from).collect(),
    };
    run.write_json(&s.out_dir.join("ppc.json"), &artifact)?;
    let summary = fit.batch.summary();
    run.write_json(&s.out_dir.join("convergence.json"), &summary)?;

    let write = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(|e| CliError::runtime(e.to_string()));
    write(
        out,
        format!(
            "max R-hat {}, min bulk ESS {}, {} divergences",
            summary.max_rhat.map_or("n/a".into(), |v| format!("{v:.3}")),
            summary.min_ess_bulk.map_or("n/a".into(), |v| format!("{v:.0}")),
            summary.divergences
        ),
    )?;
    for r in &artifact.statistics {
        write(
            out,
            format!(
                "posterior {}: observed {} band [{}, {}] ({}% central) {}",
                r.statistic.name(),
                r.observed,
                r.lower,
                r.upper,
                r.mass * 100.0,
                if r.covered { "covered" } else { "NOT covered" }
            ),
        )?;
    }

    if s.prior {
        let pd = prior_draws(&fit.layout, s.prior_draws, s.seed);
        let prior_pred = replicate_outcomes(&pd, &fit.layout, &fit.dataset, s.seed)?;
        let results = STATS
            .iter()
            .map(|&st| ppc_stat(&observed, &prior_pred, st))
            .collect::<clone_commons_core::Result<Vec<_>>>()?;
        write_stat_draws(&mut run, &s.out_dir.join("prior_ppc.csv"), &results)?;
        let artifact = PpcArtifact {
            kind: "prior",
            n_draws: pd.len(),
            statistics: results.iter().map(StatSummary::from).collect(),
        };
        run.write_json(&s.out_dir.join("prior_ppc.json"), &artifact)?;
        for r in &artifact.statistics {
            write(out, format!("prior {}: observed {} band [{}, {}]", r.statistic.name(), r.observed, r.lower, r.upper))?;
        }
    }
    Ok(())
}
