//! Fixed layout of the unconstrained parameter vector.
//!
//! ```text
//! b_mu[P]                      population coefficients, log(mu) side
//! b_zi[P]                      population coefficients, logit(xi) side
//! for block in (mu, team), (mu, team:repo), (zi, team), (zi, team:repo):
//!     log_sd[K]
//!     corr_raw[K(K-1)/2]       canonical partial correlations, row by row
//!     z[G * K]                 group-major standardized offsets
//! log_shape
//! ```
//!
//! The constrained view follows the same block order with `sd`, the upper
//! triangle of the correlation matrix, the offsets `diag(sd) L z` and `shape`.

use serde::{Deserialize, Serialize};

use super::corr::{corr_cholesky, correlation_from_cholesky, n_free};
use super::{Factor, ModelSpec, Side, Term};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub side: Side,
    pub factor: Factor,
    pub terms: Vec<Term>,
    pub labels: Vec<String>,
    pub log_sigma: usize,
    pub corr: usize,
    pub z: usize,
}

impl Block {
    pub fn k(&self) -> usize {
        self.terms.len()
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        let k = self.k();
        k + n_free(k) + self.n_groups() * k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn prefix(&self) -> String {
        match self.side {
            Side::Mu => self.factor.name().to_string(),
            Side::Zi => format!("{}__zi", self.factor.name()),
        }
    }

    fn term_name(&self, t: Term) -> String {
        match self.side {
            Side::Mu => t.name().to_string(),
            Side::Zi => format!("zi_{}", t.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub version: u32,
    pub spec: ModelSpec,
    pub population: Vec<Term>,
    pub pop_mu: usize,
    pub pop_zi: usize,
    pub blocks: Vec<Block>,
    pub log_phi: usize,
    pub dim: usize,
}

impl ParameterLayout {
    pub fn new(spec: &ModelSpec, dataset: &Dataset) -> Self {
        let teams = dataset.teams.clone();
        let cells = dataset
            .teamrepos
            .iter()
            .map(|&(t, r)| format!("{}_{}", dataset.teams[t], dataset.repos[r]))
            .collect();
        Self::with_labels(spec, teams, cells)
    }

    pub fn with_labels(spec: &ModelSpec, team_labels: Vec<String>, cell_labels: Vec<String>) -> Self {
        let population = spec.population_terms();
        let varying = spec.varying_terms();
        let p = population.len();
        let mut at = 2 * p;
        let mut blocks = Vec::with_capacity(4);
        for side in [Side::Mu, Side::Zi] {
            for factor in [Factor::Team, Factor::TeamRepo] {
                let labels = match factor {
                    Factor::Team => team_labels.clone(),
                    Factor::TeamRepo => cell_labels.clone(),
                };
                let k = varying.len();
                let b = Block {
                    side,
                    factor,
                    terms: varying.clone(),
                    labels,
                    log_sigma: at,
                    corr: at + k,
                    z: at + k + n_free(k),
                };
                at += b.len();
                blocks.push(b);
            }
        }
        ParameterLayout {
            version: LAYOUT_VERSION,
            spec: *spec,
            population,
            pop_mu: 0,
            pop_zi: p,
            blocks,
            log_phi: at,
            dim: at + 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, side: Side, factor: Factor) -> &Block {
        self.blocks
            .iter()
            .find(|b| b.side == side && b.factor == factor)
            .expect("every layout has all four blocks")
    }

    /// Population coefficient index of `term` on `side`, if present.
    pub fn population_index(&self, side: Side, term: Term) -> Option<usize> {
        let base = match side {
            Side::Mu => self.pop_mu,
            Side::Zi => self.pop_zi,
        };
        self.population.iter().position(|&t| t == term).map(|i| base + i)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::LayoutMismatch(format!(
                "expected {} parameters, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn unconstrained_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim);
        for t in &self.population {
            out.push(format!("b_{}", t.name()));
        }
        for t in &self.population {
            out.push(format!("b_zi_{}", t.name()));
        }
        for b in &self.blocks {
            let pre = b.prefix();
            for &t in &b.terms {
                out.push(format!("log_sd_{}__{}", pre, t.name()));
            }
            let k = b.k();
            for i in 1..k {
                for j in 0..i {
                    out.push(format!("corr_raw_{}[{},{}]", pre, i, j));
                }
            }
            for g in &b.labels {
                for &t in &b.terms {
                    out.push(format!("z_{}[{},{}]", pre, g, t.name()));
                }
            }
        }
        out.push("log_shape".to_string());
        out
    }

    pub fn constrained_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim);
        for t in &self.population {
            out.push(format!("b_{}", t.name()));
        }
        for t in &self.population {
            out.push(format!("b_zi_{}", t.name()));
        }
        for b in &self.blocks {
            let f = b.factor.name();
            for &t in &b.terms {
                out.push(format!("sd_{}__{}", f, b.term_name(t)));
            }
            let k = b.k();
            for i in 1..k {
                for j in 0..i {
                    out.push(format!(
                        "cor_{}__{}__{}",
                        f,
                        b.term_name(b.terms[j]),
                        b.term_name(b.terms[i])
                    ));
                }
            }
            let r = match b.side {
                Side::Mu => format!("r_{f}"),
                Side::Zi => format!("r_{f}__zi"),
            };
            for g in &b.labels {
                for &t in &b.terms {
                    out.push(format!("{r}[{g},{}]", t.name()));
                }
            }
        }
        out.push("shape".to_string());
        out
    }

    /// Maps an unconstrained vector to its constrained view.
    pub fn constrain(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = Vec::with_capacity(self.dim);
        out.extend_from_slice(&x[..2 * self.population.len()]);
        for b in &self.blocks {
            let k = b.k();
            let sigma: Vec<f64> = x[b.log_sigma..b.log_sigma + k].iter().map(|v| v.exp()).collect();
            out.extend_from_slice(&sigma);
            let l = corr_cholesky(k, &x[b.corr..b.corr + n_free(k)]);
            let omega = correlation_from_cholesky(k, &l);
            for i in 1..k {
                for j in 0..i {
                    out.push(omega[i * k + j]);
                }
            }
            for g in 0..b.n_groups() {
                let z = &x[b.z + g * k..b.z + (g + 1) * k];
                for i in 0..k {
                    let lz: f64 = (0..=i).map(|j| l[i * k + j] * z[j]).sum();
                    out.push(sigma[i] * lz);
                }
            }
        }
        out.push(x[self.log_phi].exp());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn layout(kind: ModelKind) -> ParameterLayout {
        ParameterLayout::with_labels(
            &ModelSpec::new(kind),
            vec!["Red".into(), "Blue".into()],
            vec!["Red_r1".into(), "Blue_r1".into(), "Blue_r2".into()],
        )
    }

    #[test]
    fn dimensions() {
        // M0: 2 population, each block 1 sd + groups, shape.
        let l = layout(ModelKind::M0);
        assert_eq!(l.dim(), 2 + 2 * ((1 + 2) + (1 + 3)) + 1);
        // M2: 10 population, K = 4 blocks with 6 correlation parameters.
        let l = layout(ModelKind::M2);
        assert_eq!(l.dim(), 10 + 2 * ((4 + 6 + 8) + (4 + 6 + 12)) + 1);
        assert_eq!(l.unconstrained_names().len(), l.dim());
        assert_eq!(l.constrained_names().len(), l.dim());
    }

    #[test]
    fn names_are_unique() {
        for kind in [ModelKind::M0, ModelKind::M1, ModelKind::M2] {
            let l = layout(kind);
            for names in [l.unconstrained_names(), l.constrained_names()] {
                let set: std::collections::BTreeSet<_> = names.iter().collect();
                assert_eq!(set.len(), names.len());
            }
        }
        let names = layout(ModelKind::M1).constrained_names();
        assert!(names.contains(&"sd_team:repo__zi_R".to_string()));
        assert!(names.contains(&"cor_team__Intercept__R".to_string()));
        assert!(names.contains(&"r_team__zi[Blue,R]".to_string()));
    }

    #[test]
    fn constrained_view() {
        let l = layout(ModelKind::M1);
        let x: Vec<f64> = (0..l.dim()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect();
        let c = l.constrain(&x).unwrap();
        assert!((c[l.dim() - 1] - x[l.log_phi].exp()).abs() < 1e-15);
        let b = l.block(Side::Mu, Factor::Team);
        assert_eq!(c[b.log_sigma], x[b.log_sigma].exp());
        let r = x[b.corr].tanh();
        assert!((c[b.corr] - r).abs() < 1e-12);
        // First group's intercept offset is sd0 * z0.
        assert!((c[b.z] - x[b.log_sigma].exp() * x[b.z]).abs() < 1e-12);
        let slope = x[b.log_sigma + 1].exp() * (r * x[b.z] + (1.0 - r * r).sqrt() * x[b.z + 1]);
        assert!((c[b.z + 1] - slope).abs() < 1e-12);
        assert!(l.constrain(&x[1..]).is_err());
    }
}
