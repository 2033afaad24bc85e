//! Fixtures shared by the benchmarks.

use clone_commons_core::model::{ModelKind, ModelSpec, Posterior};
use clone_commons_core::predict::{simulate_dataset, SimulatedData, SimulationDesign, TrueParameters};
use clone_commons_core::sampler::{run_chains, ChainConfig};

/// 5 teams x 4 repositories with `n` rows drawn from `kind`.
pub fn simulated(kind: ModelKind, n: usize) -> SimulatedData {
    simulate_dataset(&TrueParameters::preset(kind), SimulationDesign { teams: 5, repos: 4, n }, 1).expect("valid design")
}

/// Step size, diagonal inverse metric and a typical point after a short warmup.
pub struct Tuned {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub position: Vec<f64>,
}

pub fn tuned(post: &Posterior<'_>, warmup: usize) -> Tuned {
    let cfg = ChainConfig { chains: 1, warmup, samples: 1, seed: 5, ..ChainConfig::default() };
    let batch = run_chains(post, &cfg).expect("warmup runs");
    let c = &batch.chains[0];
    Tuned { step_size: c.step_size, inv_metric: c.inv_metric.clone(), position: c.unconstrained[0].clone() }
}

pub fn spec(kind: ModelKind) -> ModelSpec {
    ModelSpec::new(kind)
}
