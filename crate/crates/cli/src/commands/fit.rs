use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use clone_commons_core::dataset::{build_dataset_with, Dataset};
use clone_commons_core::ingest::read_events_csv;
use clone_commons_core::model::{ModelKind, ModelSpec, ParameterLayout, Posterior, PriorConfig, LAYOUT_VERSION};
use clone_commons_core::sampler::{run_chains, ChainConfig, SampleBatch};
use clone_commons_core::OutcomeKind;

use super::{attribution, load_dataset, model_kind, outcome_for, write_dataset};
use crate::args::{merge_with_config, FitArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainAdaptation {
    pub chain: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
}

/// Contents of `fit.json`: everything needed to reinterpret `draws.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMeta {
    pub model: ModelKind,
    pub priors: PriorConfig,
    pub chain_config: ChainConfig,
    pub layout_version: u32,
    pub outcome: OutcomeKind,
    pub n_observations: usize,
    pub unconstrained_names: Vec<String>,
    pub constrained_names: Vec<String>,
    pub adaptation: Vec<ChainAdaptation>,
}

pub struct FitArtifacts {
    pub dir: PathBuf,
    pub meta: FitMeta,
    pub spec: ModelSpec,
    pub dataset: Dataset,
    pub layout: ParameterLayout,
    pub batch: SampleBatch,
}

impl FitArtifacts {
    pub fn draws(&self) -> Vec<Vec<f64>> {
        self.batch.unconstrained_draws()
    }
}

pub fn load_fit(run: &mut Run, dir: &Path) -> CliResult<FitArtifacts> {
    let meta_path = dir.join("fit.json");
    let meta: FitMeta = serde_json::from_slice(&run.read(&meta_path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", meta_path.display())))?;
    if meta.layout_version != LAYOUT_VERSION {
        return Err(CliError::validation(format!(
            "{} uses parameter layout {}, this build reads {LAYOUT_VERSION}",
            meta_path.display(),
            meta.layout_version
        )));
    }
    let dataset = load_dataset(run, &dir.join("dataset.json"))?;
    let spec = ModelSpec::with_priors(meta.model, meta.priors);
    let layout = ParameterLayout::new(&spec, &dataset);
    if layout.unconstrained_names() != meta.unconstrained_names {
        return Err(CliError::validation(format!("{} does not match its dataset", meta_path.display())));
    }
    let draws = run.read(&dir.join("draws.csv"))?;
    let batch = SampleBatch::read_draws_csv(
        draws.as_slice(),
        meta.unconstrained_names.clone(),
        meta.constrained_names.clone(),
        meta.chain_config,
    )?;
    Ok(FitArtifacts { dir: dir.to_path_buf(), meta, spec, dataset, layout, batch })
}

#[derive(Serialize)]
struct FitSettings {
    model: ModelKind,
    data: Option<PathBuf>,
    dataset: Option<PathBuf>,
    outcome: OutcomeKind,
    attribution: String,
    priors: PriorConfig,
    priors_file: Option<PathBuf>,
    sampler: ChainConfig,
    out_dir: PathBuf,
}

pub fn fit(args: &FitArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let kind = model_kind(a.model.as_deref())?;
    let outcome = outcome_for(kind, a.outcome.as_deref())?;
    let attr = attribution(a.attribution.as_deref())?;
    let d = ChainConfig::default();
    let sampler = ChainConfig {
        chains: a.chains.unwrap_or(d.chains),
        warmup: a.warmup.unwrap_or(d.warmup),
        samples: a.samples.unwrap_or(d.samples),
        target_accept: a.target_accept.unwrap_or(d.target_accept),
        max_treedepth: a.max_treedepth.unwrap_or(d.max_treedepth),
        max_energy_error: a.max_energy_error.unwrap_or(d.max_energy_error),
        init_radius: a.init_radius.unwrap_or(d.init_radius),
        seed: a.seed.unwrap_or(d.seed),
    };
    sampler.validate()?;
    if a.data.is_none() && a.dataset.is_none() {
        return Err(CliError::validation("missing required option --data (or --dataset)"));
    }
    let mut pre = Run::new("fit", &Value::Null, None)?;
    let priors = match &a.priors {
        Some(p) => {
            let pc: PriorConfig = serde_json::from_slice(&pre.read(p)?)
                .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
            pc.validate()?;
            pc
        }
        None => PriorConfig::default(),
    };
    let dataset = match (&a.data, &a.dataset) {
        (Some(events), _) => {
            let ev = read_events_csv(pre.read(events)?.as_slice())?;
            build_dataset_with(&ev, outcome, attr)?
        }
        (None, Some(sidecar)) => {
            let ds = load_dataset(&mut pre, sidecar)?;
            if a.outcome.is_some() && ds.outcome_kind != outcome {
                return Err(CliError::validation(format!(
                    "dataset holds {:?} outcomes but --outcome asks for {outcome:?}",
                    ds.outcome_kind
                )));
            }
            ds
        }
        (None, None) => unreachable!(),
    };
    let s = FitSettings {
        model: kind,
        data: a.data.clone(),
        dataset: a.dataset.clone(),
        outcome: dataset.outcome_kind,
        attribution: format!("{:?}", dataset.attribution).to_lowercase(),
        priors,
        priors_file: a.priors.clone(),
        sampler,
        out_dir: a.out_dir.clone().unwrap_or_else(|| "fit".into()),
    };
    let mut run = Run::new("fit", &s, Some(sampler.seed))?;
    run.manifest.inputs = pre.manifest.inputs;

    let spec = ModelSpec::with_priors(kind, priors);
    let post = Posterior::new(&dataset, &spec)?;
    let batch = run_chains(&post, &sampler)?;
    let summary = batch.summary();
    let layout = ParameterLayout::new(&spec, &dataset);
    let meta = FitMeta {
        model: kind,
        priors,
        chain_config: sampler,
        layout_version: LAYOUT_VERSION,
        outcome: dataset.outcome_kind,
        n_observations: dataset.len(),
        unconstrained_names: layout.unconstrained_names(),
        constrained_names: layout.constrained_names(),
        adaptation: batch
            .chains
            .iter()
            .map(|c| ChainAdaptation {
                chain: c.chain,
                step_size: c.step_size,
                inv_metric: c.inv_metric.clone(),
                warmup_divergences: c.warmup_divergences,
            })
            .collect(),
    };
    let dir = &s.out_dir;
    write_dataset(&mut run, &dir.join("dataset.json"), &dataset)?;
    run.write_json(&dir.join("fit.json"), &meta)?;
    run.write_csv_with(&dir.join("draws.csv"), |buf| batch.write_draws_csv(buf))?;
    run.write_json(&dir.join("summary.json"), &summary)?;
    writeln!(
        out,
        "{kind}: {} chains x {} draws, {} divergences, max R-hat {}, min bulk ESS {} -> {}",
        sampler.chains,
        sampler.samples,
        summary.divergences,
        summary.max_rhat.map_or("n/a".into(), |v| format!("{v:.3}")),
        summary.min_ess_bulk.map_or("n/a".into(), |v| format!("{v:.0}")),
        dir.display()
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}
