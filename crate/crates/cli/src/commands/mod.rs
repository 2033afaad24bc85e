mod data;
mod diagnose;
mod fit;
mod loo;
mod predict;
mod report;

pub use data::{ingest, metrics, ocam, simulate};
pub use diagnose::diagnose;
pub use fit::{fit, load_fit, FitArtifacts, FitMeta};
pub use loo::loo;
pub use predict::predict;
pub use report::report;

use std::path::{Path, PathBuf};

use clone_commons_core::dataset::Dataset;
use clone_commons_core::ingest::Attribution;
use clone_commons_core::model::ModelKind;
use clone_commons_core::OutcomeKind;

use crate::error::{CliError, CliResult};
use crate::manifest::Run;

pub(crate) fn parse<T>(value: &str, what: &str) -> CliResult<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::validation(format!("invalid {what}: {e}")))
}

pub(crate) fn model_kind(s: Option<&str>) -> CliResult<ModelKind> {
    parse(s.unwrap_or("m0"), "model")
}

pub(crate) fn attribution(s: Option<&str>) -> CliResult<Attribution> {
    parse(s.unwrap_or("committer"), "attribution")
}

pub(crate) fn outcome_for(kind: ModelKind, s: Option<&str>) -> CliResult<OutcomeKind> {
    let default = if kind == ModelKind::M3 { OutcomeKind::Removed } else { OutcomeKind::Introduced };
    let o = match s {
        Some(s) => parse(s, "outcome")?,
        None => default,
    };
    if kind == ModelKind::M3 && o != OutcomeKind::Removed {
        return Err(CliError::validation("m3 models removed clones; use --outcome removed"));
    }
    Ok(o)
}

/// Matrix CSV stored next to a dataset JSON sidecar.
pub(crate) fn matrix_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("csv")
}

pub(crate) fn load_dataset(run: &mut Run, sidecar: &Path) -> CliResult<Dataset> {
    let json = run.read(sidecar)?;
    let csv = run.read(&matrix_path(sidecar))?;
    Ok(Dataset::load(json.as_slice(), csv.as_slice())?)
}

pub(crate) fn write_dataset(run: &mut Run, sidecar: &Path, dataset: &Dataset) -> CliResult<()> {
    run.write_json(sidecar, &dataset.sidecar())?;
    let m = matrix_path(sidecar);
    run.write_csv_with(&m, |buf| dataset.write_matrix_csv(buf))
}
