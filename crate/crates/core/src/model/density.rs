//! Log posterior and its exact gradient on the unconstrained scale.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Weibull};
use rayon::prelude::*;

use super::corr::{corr_factor, corr_unconstrain, n_free, sample_lkj_cholesky, CorrFactor};
use super::layout::{Block, ParameterLayout};
use super::zinb::{zinb_term, zinb_term_cached, CountConstants};
use super::{Factor, ModelSpec, NormalPrior, Side, Term};
use crate::dataset::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::stats::{ln_gamma, LN_2PI};

/// Standard deviations, correlation factor and offsets of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockValues {
    pub sigma: Vec<f64>,
    /// Row-major lower Cholesky factor of the correlation matrix.
    pub l: Vec<f64>,
    /// Group-major `diag(sigma) L z`.
    pub offsets: Vec<f64>,
}

pub fn block_values(x: &[f64], b: &Block) -> BlockValues {
    let k = b.k();
    let sigma: Vec<f64> = x[b.log_sigma..b.log_sigma + k].iter().map(|v| v.exp()).collect();
    let l = super::corr::corr_cholesky(k, &x[b.corr..b.corr + n_free(k)]);
    let offsets = offsets_of(&sigma, &l, &x[b.z..b.z + b.n_groups() * k], k);
    BlockValues { sigma, l, offsets }
}

fn offsets_of(sigma: &[f64], l: &[f64], z: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (zg, og) in z.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        for i in 0..k {
            let lz: f64 = (0..=i).map(|j| l[i * k + j] * zg[j]).sum();
            og[i] = sigma[i] * lz;
        }
    }
    out
}

fn design_row(o: &Observation) -> [f64; 5] {
    [1.0, o.a, o.r, o.c, o.d]
}

fn group_of(o: &Observation, f: Factor) -> usize {
    match f {
        Factor::Team => o.team,
        Factor::TeamRepo => o.teamrepo,
    }
}

fn normal_lpdf(x: f64, p: NormalPrior) -> (f64, f64) {
    let u = (x - p.location) / p.scale;
    (-0.5 * u * u - p.scale.ln() - 0.5 * LN_2PI, -u / p.scale)
}

/// Observations sharing a group, outcome and used design values, which
/// contribute identical likelihood terms.
#[derive(Debug, Clone, Copy)]
struct Unit {
    y: u64,
    count: usize,
    team: usize,
    cell: usize,
    row: [f64; 5],
    weight: f64,
}

const NO_COUNT: usize = usize::MAX;

/// Log posterior of one model on one dataset.
pub struct Posterior<'a> {
    pub dataset: &'a Dataset,
    pub layout: ParameterLayout,
    design: Vec<[f64; 5]>,
    columns: Vec<usize>,
    units: Vec<Unit>,
    counts: Vec<u64>,
}

struct Unpacked {
    factors: Vec<CorrFactor>,
    sigma: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
}

impl<'a> Posterior<'a> {
    pub fn new(dataset: &'a Dataset, spec: &ModelSpec) -> Result<Self> {
        spec.priors.validate()?;
        let layout = ParameterLayout::new(spec, dataset);
        for (i, o) in dataset.observations.iter().enumerate() {
            if o.team >= dataset.n_teams() || o.teamrepo >= dataset.n_teamrepos() {
                return Err(Error::IndexOutOfRange(format!("observation {i} has an invalid category index")));
            }
        }
        let design: Vec<[f64; 5]> = dataset.observations.iter().map(design_row).collect();
        let columns = spec.varying_terms().iter().map(|t| t.column()).collect();
        let used: Vec<usize> = spec.population_terms().iter().map(|t| t.column()).collect();
        let counts: Vec<u64> = dataset
            .observations
            .iter()
            .filter(|o| o.y > 0)
            .map(|o| o.y)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut units: Vec<Unit> = Vec::new();
        let mut index: HashMap<(usize, usize, u64, [u64; 5]), usize> = HashMap::new();
        for (o, full) in dataset.observations.iter().zip(&design) {
            let mut row = [0.0; 5];
            let mut bits = [0u64; 5];
            for &c in &used {
                row[c] = full[c];
                bits[c] = full[c].to_bits();
            }
            let key = (o.team, o.teamrepo, o.y, bits);
            match index.get(&key) {
                Some(&u) => units[u].weight += 1.0,
                None => {
                    index.insert(key, units.len());
                    let count = if o.y == 0 { NO_COUNT } else { counts.binary_search(&o.y).expect("indexed count") };
                    units.push(Unit { y: o.y, count, team: o.team, cell: o.teamrepo, row, weight: 1.0 });
                }
            }
        }
        Ok(Posterior { dataset, layout, design, columns, units, counts })
    }

    /// Number of distinct likelihood terms after merging identical rows.
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    fn count_constants(&self, phi: f64, want_grad: bool) -> Vec<CountConstants> {
        self.counts.iter().map(|&y| CountConstants::new(y, phi, want_grad)).collect()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn unpack(&self, x: &[f64]) -> Unpacked {
        let eta = self.layout.spec.priors.lkj_eta;
        let mut u = Unpacked {
            factors: Vec::with_capacity(4),
            sigma: Vec::with_capacity(4),
            l: Vec::with_capacity(4),
            offsets: Vec::with_capacity(4),
        };
        for b in &self.layout.blocks {
            let k = b.k();
            let f = corr_factor(k, &x[b.corr..b.corr + n_free(k)], eta);
            let l: Vec<f64> = f.l.iter().map(|d| d.v).collect();
            let sigma: Vec<f64> = x[b.log_sigma..b.log_sigma + k].iter().map(|v| v.exp()).collect();
            u.offsets.push(offsets_of(&sigma, &l, &x[b.z..b.z + b.n_groups() * k], k));
            u.sigma.push(sigma);
            u.l.push(l);
            u.factors.push(f);
        }
        u
    }

    fn etas(&self, x: &[f64], u: &Unpacked, row: &[f64; 5], team: usize, cell: usize) -> (f64, f64) {
        let lay = &self.layout;
        let mut eta = [0.0f64; 2];
        for (pi, t) in lay.population.iter().enumerate() {
            let v = row[t.column()];
            eta[0] += x[lay.pop_mu + pi] * v;
            eta[1] += x[lay.pop_zi + pi] * v;
        }
        for (bi, b) in lay.blocks.iter().enumerate() {
            let k = b.k();
            let g = match b.factor {
                Factor::Team => team,
                Factor::TeamRepo => cell,
            };
            let off = &u.offsets[bi][g * k..(g + 1) * k];
            let s: f64 = off.iter().zip(&self.columns).map(|(w, &c)| w * row[c]).sum();
            eta[(b.side == Side::Zi) as usize] += s;
        }
        (eta[0], eta[1])
    }

    fn obs_etas(&self, x: &[f64], u: &Unpacked, i: usize) -> (f64, f64) {
        let o = &self.dataset.observations[i];
        self.etas(x, u, &self.design[i], o.team, o.teamrepo)
    }

    /// Evaluates the log likelihood and, when requested, accumulates its
    /// gradient into `grad`.
    fn likelihood(&self, x: &[f64], u: &Unpacked, grad: Option<&mut [f64]>) -> f64 {
        let lay = &self.layout;
        let log_phi = x[lay.log_phi];
        let phi = log_phi.exp();
        let want_grad = grad.is_some();
        let cc = self.count_constants(phi, want_grad);
        let term = |unit: &Unit| {
            let (em, ez) = self.etas(x, u, &unit.row, unit.team, unit.cell);
            let c = if unit.count == NO_COUNT { CountConstants { log_gamma_ratio: 0.0, digamma_diff: 0.0 } } else { cc[unit.count] };
            zinb_term_cached(unit.y, em, ez, log_phi, phi, c, want_grad)
        };
        let Some(grad) = grad else {
            return self.units.iter().map(|unit| unit.weight * term(unit).log_lik).sum();
        };
        let mut ll = 0.0;
        let mut g_blocks: Vec<Vec<f64>> = u.offsets.iter().map(|o| vec![0.0; o.len()]).collect();
        let mut d_log_phi = 0.0;
        for unit in &self.units {
            let t = term(unit);
            let w = unit.weight;
            ll += w * t.log_lik;
            d_log_phi += w * t.d_log_phi;
            let (dm, dz) = (w * t.d_eta_mu, w * t.d_eta_zi);
            let row = &unit.row;
            for (pi, term) in lay.population.iter().enumerate() {
                let v = row[term.column()];
                grad[lay.pop_mu + pi] += dm * v;
                grad[lay.pop_zi + pi] += dz * v;
            }
            for (bi, b) in lay.blocks.iter().enumerate() {
                let k = b.k();
                let d = if b.side == Side::Mu { dm } else { dz };
                let g = match b.factor {
                    Factor::Team => unit.team,
                    Factor::TeamRepo => unit.cell,
                };
                let gb = &mut g_blocks[bi][g * k..(g + 1) * k];
                for (gv, &c) in gb.iter_mut().zip(&self.columns) {
                    *gv += d * row[c];
                }
            }
        }
        grad[lay.log_phi] += d_log_phi;
        for (bi, b) in lay.blocks.iter().enumerate() {
            let k = b.k();
            let sigma = &u.sigma[bi];
            let l = &u.l[bi];
            let z = &x[b.z..b.z + b.n_groups() * k];
            let mut d_sigma = vec![0.0; k];
            let mut d_l = vec![0.0; k * k];
            for (g, (zg, gg)) in z.chunks_exact(k).zip(g_blocks[bi].chunks_exact(k)).enumerate() {
                for i in 0..k {
                    if gg[i] == 0.0 {
                        continue;
                    }
                    let lz: f64 = (0..=i).map(|j| l[i * k + j] * zg[j]).sum();
                    d_sigma[i] += gg[i] * lz;
                    for j in 0..=i {
                        d_l[i * k + j] += sigma[i] * gg[i] * zg[j];
                        grad[b.z + g * k + j] += gg[i] * sigma[i] * l[i * k + j];
                    }
                }
            }
            for i in 0..k {
                grad[b.log_sigma + i] += d_sigma[i] * sigma[i];
            }
            let f = &u.factors[bi];
            for m in 0..n_free(k) {
                let s: f64 = (0..k * k).map(|e| d_l[e] * f.l[e].d[m]).sum();
                grad[b.corr + m] += s;
            }
        }
        ll
    }

    /// Log prior plus log-Jacobian terms, with gradient accumulation.
    fn prior(&self, x: &[f64], u: &Unpacked, mut grad: Option<&mut [f64]>) -> f64 {
        let lay = &self.layout;
        let pr = &lay.spec.priors;
        let mut lp = 0.0;
        for (pi, t) in lay.population.iter().enumerate() {
            let p = if *t == Term::Intercept { pr.intercept } else { pr.slope };
            for idx in [lay.pop_mu + pi, lay.pop_zi + pi] {
                let (v, d) = normal_lpdf(x[idx], p);
                lp += v;
                if let Some(g) = grad.as_deref_mut() {
                    g[idx] += d;
                }
            }
        }
        let (wk, wl) = (pr.sd.shape, pr.sd.scale);
        for (bi, b) in lay.blocks.iter().enumerate() {
            let k = b.k();
            for i in 0..k {
                let ls = x[b.log_sigma + i];
                let r = (u.sigma[bi][i] / wl).powf(wk);
                lp += wk.ln() - wl.ln() + (wk - 1.0) * (ls - wl.ln()) - r + ls;
                if let Some(g) = grad.as_deref_mut() {
                    g[b.log_sigma + i] += wk - wk * r;
                }
            }
            let f = &u.factors[bi];
            lp += f.log_density.v;
            if let Some(g) = grad.as_deref_mut() {
                for m in 0..n_free(k) {
                    g[b.corr + m] += f.log_density.d[m];
                }
            }
            for idx in b.z..b.z + b.n_groups() * k {
                lp += -0.5 * x[idx] * x[idx] - 0.5 * LN_2PI;
                if let Some(g) = grad.as_deref_mut() {
                    g[idx] -= x[idx];
                }
            }
        }
        let (ga, gb) = (pr.shape.shape, pr.shape.rate);
        let v = x[lay.log_phi];
        let phi = v.exp();
        lp += ga * gb.ln() - ln_gamma(ga) + (ga - 1.0) * v - gb * phi + v;
        if let Some(g) = grad {
            g[lay.log_phi] += ga - gb * phi;
        }
        lp
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.layout.check(x)?;
        let u = self.unpack(x);
        let v = self.likelihood(x, &u, None) + self.prior(x, &u, None);
        finite(v)
    }

    /// Log posterior with its gradient written into `grad`.
    pub fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.layout.check(x)?;
        self.layout.check(grad)?;
        grad.fill(0.0);
        let u = self.unpack(x);
        let v = self.likelihood(x, &u, Some(grad)) + self.prior(x, &u, Some(grad));
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        finite(v)
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.layout.check(x)?;
        let u = self.unpack(x);
        Ok(self.likelihood(x, &u, None))
    }

    pub fn log_prior(&self, x: &[f64]) -> Result<f64> {
        self.layout.check(x)?;
        let u = self.unpack(x);
        Ok(self.prior(x, &u, None))
    }

    /// Per-observation log likelihood at `x`.
    pub fn pointwise(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layout.check(x)?;
        let u = self.unpack(x);
        let log_phi = x[self.layout.log_phi];
        let phi = log_phi.exp();
        Ok(self
            .dataset
            .observations
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let (em, ez) = self.obs_etas(x, &u, i);
                zinb_term(o.y, em, ez, log_phi, phi, false).log_lik
            })
            .collect())
    }

    /// Per-observation log likelihood at `x` for observations `range`.
    pub fn pointwise_range(&self, x: &[f64], range: std::ops::Range<usize>) -> Result<Vec<f64>> {
        self.layout.check(x)?;
        if range.end > self.dataset.len() {
            return Err(Error::IndexOutOfRange(format!("observation range {range:?}")));
        }
        let u = self.unpack(x);
        let log_phi = x[self.layout.log_phi];
        let phi = log_phi.exp();
        Ok(range
            .map(|i| {
                let (em, ez) = self.obs_etas(x, &u, i);
                zinb_term(self.dataset.observations[i].y, em, ez, log_phi, phi, false).log_lik
            })
            .collect())
    }

    /// `(log mu, logit xi)` for every observation at `x`.
    pub fn all_linear_predictors(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        self.layout.check(x)?;
        let u = self.unpack(x);
        Ok(self
            .dataset
            .observations
            .iter()
            .enumerate()
            .map(|(i, _)| self.obs_etas(x, &u, i))
            .collect())
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("log density evaluated to {v}")))
    }
}

pub fn log_posterior(params: &[f64], dataset: &Dataset, spec: &ModelSpec) -> Result<f64> {
    Posterior::new(dataset, spec)?.log_density(params)
}

pub fn gradient(params: &[f64], dataset: &Dataset, spec: &ModelSpec) -> Result<Vec<f64>> {
    let post = Posterior::new(dataset, spec)?;
    let mut g = vec![0.0; post.dim()];
    post.log_density_and_gradient(params, &mut g)?;
    Ok(g)
}

pub fn log_likelihood(params: &[f64], dataset: &Dataset, spec: &ModelSpec) -> Result<f64> {
    Posterior::new(dataset, spec)?.log_likelihood(params)
}

/// `(log mu, logit xi)` of one observation.
pub fn linear_predictors(obs: &Observation, params: &[f64], layout: &ParameterLayout) -> Result<(f64, f64)> {
    layout.check(params)?;
    let mut eta = [0.0f64; 2];
    let row = design_row(obs);
    for (pi, t) in layout.population.iter().enumerate() {
        eta[0] += params[layout.pop_mu + pi] * row[t.column()];
        eta[1] += params[layout.pop_zi + pi] * row[t.column()];
    }
    for b in &layout.blocks {
        let g = group_of(obs, b.factor);
        if g >= b.n_groups() {
            return Err(Error::IndexOutOfRange(format!(
                "{} index {g} with {} groups",
                b.factor.name(),
                b.n_groups()
            )));
        }
        let v = block_values(params, b);
        let k = b.k();
        let s: f64 = b
            .terms
            .iter()
            .enumerate()
            .map(|(j, t)| v.offsets[g * k + j] * row[t.column()])
            .sum();
        eta[(b.side == Side::Zi) as usize] += s;
    }
    Ok((eta[0], eta[1]))
}

/// Draw × observation matrix of pointwise log likelihoods.
pub fn pointwise_log_lik(draws: &[Vec<f64>], dataset: &Dataset, spec: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    let post = Posterior::new(dataset, spec)?;
    draws.par_iter().map(|x| post.pointwise(x)).collect()
}

/// Independent prior draw, returned on the unconstrained scale.
pub fn sample_prior(layout: &ParameterLayout, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_prior_with(layout, &mut rng)
}

pub fn sample_prior_with<R: rand::Rng + ?Sized>(layout: &ParameterLayout, rng: &mut R) -> Vec<f64> {
    let pr = &layout.spec.priors;
    let mut x = vec![0.0; layout.dim()];
    for (pi, t) in layout.population.iter().enumerate() {
        let p = if *t == Term::Intercept { pr.intercept } else { pr.slope };
        let d = Normal::new(p.location, p.scale).expect("validated prior");
        x[layout.pop_mu + pi] = d.sample(rng);
        x[layout.pop_zi + pi] = d.sample(rng);
    }
    let weibull = Weibull::new(pr.sd.scale, pr.sd.shape).expect("validated prior");
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    for b in &layout.blocks {
        let k = b.k();
        for i in 0..k {
            x[b.log_sigma + i] = weibull.sample(rng).max(f64::MIN_POSITIVE).ln();
        }
        let l = sample_lkj_cholesky(k, pr.lkj_eta, rng);
        let y = corr_unconstrain(k, &l);
        x[b.corr..b.corr + y.len()].copy_from_slice(&y);
        for idx in b.z..b.z + b.n_groups() * k {
            x[idx] = std.sample(rng);
        }
    }
    let gamma = Gamma::new(pr.shape.shape, 1.0 / pr.shape.rate).expect("validated prior");
    x[layout.log_phi] = gamma.sample(rng).max(f64::MIN_POSITIVE).ln();
    x
}
