//! Model definitions: the zero-inflated negative-binomial likelihood, the
//! linear predictors of the intercept-only (`M0`, `M3`), partial (`M1`) and
//! full (`M2`) models, priors, the unconstrained parameterization and exact
//! log-posterior gradients.
//!
//! Every model has two linear predictors: `log(mu)` for the negative-binomial
//! mean and `logit(xi)` for the zero-inflation gate. Each combines population
//! coefficients with offsets for the team and for the team×repository cell.
//! Within a grouping factor the varying coefficients of one side share a
//! multivariate normal block, `offsets = diag(sigma) L z` with `L` the
//! Cholesky factor of an LKJ-distributed correlation matrix and `z` standard
//! normal (non-centered).

pub mod corr;
pub mod density;
pub mod dual;
pub mod layout;
pub mod zinb;

use serde::{Deserialize, Serialize};

use crate::dataset::Predictor;
use crate::error::{Error, Result};

pub use density::{
    gradient, linear_predictors, log_likelihood, log_posterior, pointwise_log_lik, sample_prior, sample_prior_with, Posterior,
};
pub use layout::{ParameterLayout, LAYOUT_VERSION};
pub use zinb::zinb_log_pmf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    M0,
    M1,
    M2,
    M3,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::M0 => "m0",
            ModelKind::M1 => "m1",
            ModelKind::M2 => "m2",
            ModelKind::M3 => "m3",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m0" => Ok(ModelKind::M0),
            "m1" => Ok(ModelKind::M1),
            "m2" => Ok(ModelKind::M2),
            "m3" => Ok(ModelKind::M3),
            other => Err(Error::invalid(format!("unknown model {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A coefficient's covariate: the intercept or one of the predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Slope(Predictor),
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Intercept => "Intercept",
            Term::Slope(p) => p.name(),
        }
    }

    /// Column in the `[1, A, R, C, D]` design row.
    pub fn column(self) -> usize {
        match self {
            Term::Intercept => 0,
            Term::Slope(Predictor::A) => 1,
            Term::Slope(Predictor::R) => 2,
            Term::Slope(Predictor::C) => 3,
            Term::Slope(Predictor::D) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `log(mu)` of the negative binomial.
    Mu,
    /// `logit(xi)` of the zero-inflation gate.
    Zi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Team,
    TeamRepo,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::Team => "team",
            Factor::TeamRepo => "team:repo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub location: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullPrior {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

/// Prior constants, shared by the mean and zero-inflation sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub intercept: NormalPrior,
    pub slope: NormalPrior,
    pub sd: WeibullPrior,
    pub lkj_eta: f64,
    pub shape: GammaPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            intercept: NormalPrior { location: 0.0, scale: 0.5 },
            slope: NormalPrior { location: 0.0, scale: 0.25 },
            sd: WeibullPrior { shape: 2.0, scale: 0.25 },
            lkj_eta: 2.0,
            shape: GammaPrior { shape: 0.5, rate: 0.1 },
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.intercept.scale > 0.0
            && self.slope.scale > 0.0
            && self.sd.shape > 0.0
            && self.sd.scale > 0.0
            && self.lkj_eta > 0.0
            && self.shape.shape > 0.0
            && self.shape.rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("prior scales, shapes and rates must be positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub priors: PriorConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            priors: PriorConfig::default(),
        }
    }

    pub fn with_priors(kind: ModelKind, priors: PriorConfig) -> Self {
        ModelSpec { kind, priors }
    }

    /// Population-level coefficients of each side.
    pub fn population_terms(&self) -> Vec<Term> {
        use Predictor::*;
        match self.kind {
            ModelKind::M0 | ModelKind::M3 => vec![Term::Intercept],
            ModelKind::M1 => vec![Term::Intercept, Term::Slope(A), Term::Slope(R)],
            ModelKind::M2 => vec![
                Term::Intercept,
                Term::Slope(A),
                Term::Slope(R),
                Term::Slope(C),
                Term::Slope(D),
            ],
        }
    }

    /// Coefficients that vary by team and by team×repository.
    pub fn varying_terms(&self) -> Vec<Term> {
        use Predictor::*;
        match self.kind {
            ModelKind::M0 | ModelKind::M3 => vec![Term::Intercept],
            ModelKind::M1 => vec![Term::Intercept, Term::Slope(R)],
            ModelKind::M2 => vec![
                Term::Intercept,
                Term::Slope(R),
                Term::Slope(C),
                Term::Slope(D),
            ],
        }
    }
}
