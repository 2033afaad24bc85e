//! Mining version-control histories into clone introduction/removal events and
//! fitting zero-inflated negative-binomial multilevel models of how teams
//! introduce and remove code clones.
//!
//! The pipeline is:
//!
//! 1. [`ingest`] turns change logs, org charts and per-file metrics into
//!    [`FileChangeEvent`] rows.
//! 2. [`clones`] provides a built-in Type-1 duplicate-block detector and a
//!    keyword-based cyclomatic complexity estimate for raw source trees.
//! 3. [`dataset`] log-transforms and standardizes predictors into a [`Dataset`].
//! 4. [`model`] defines the likelihood, priors and the exact log posterior with
//!    its gradient for the intercept-only, partial and full models.
//! 5. [`sampler`] runs multi-chain No-U-Turn sampling with warmup adaptation.
//! 6. [`diagnostics`] computes PSIS-LOO, model comparison, rootograms and
//!    predictive check statistics.
//! 7. [`predict`] produces predictive summaries for arbitrary change settings.
//! 8. [`ocam`] computes contribution metrics and per-repository team ranks.

pub mod clones;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod model;
pub mod ocam;
pub mod predict;
pub mod sampler;
pub mod stats;

pub use dataset::{Dataset, Observation, OutcomeKind, StandardizationParams};
pub use error::{Error, Result};
pub use ingest::{CommitRecord, FileChangeEvent, FileMetricsSnapshot, OrgChartSnapshot};
pub use model::{ModelKind, ModelSpec, ParameterLayout, PriorConfig};
pub use sampler::{ChainConfig, SampleBatch};
