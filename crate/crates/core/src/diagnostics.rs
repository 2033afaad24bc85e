//! PSIS-LOO, model comparison, exact refits for flagged points, rootograms
//! and predictive check statistics.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Posterior};
use crate::sampler::{run_chains, ChainConfig};
use crate::stats::{log_sum_exp, mean, quantile_sorted, sorted, variance};

/// Pareto-k above this marks an observation as unreliable.
pub const K_THRESHOLD: f64 = 0.7;

pub const MIN_DRAWS: usize = 100;

/// Refits with a larger R-hat are reported as not converged.
pub const REFIT_RHAT_LIMIT: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub k: f64,
    pub sigma: f64,
    /// Set when all excesses are equal; `k` is then `-inf`.
    pub degenerate: bool,
}

/// Generalized Pareto fit to ascending tail excesses using the
/// profile-likelihood quadrature estimator, with the shape shrunk toward 0.5
/// by a weakly informative prior worth 10 observations.
pub fn gpd_fit_tail(x: &[f64]) -> Result<GpdFit> {
    let n = x.len();
    if n < 5 {
        return Err(Error::invalid(format!("generalized Pareto fit needs at least 5 tail points, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("tail excesses must be finite and nonnegative"));
    }
    if x.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("tail excesses must be sorted ascending"));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Ok(GpdFit { k: f64::NEG_INFINITY, sigma: 0.0, degenerate: true });
    }
    let nf = n as f64;
    let prior = 3.0;
    let m = 30 + (nf.sqrt() as usize);
    let x_star = x[((nf / 4.0 + 0.5).floor() as usize).max(1) - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / x_star)
        .collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let b = -t;
            let k = x.iter().map(|&v| (b * v).ln_1p()).sum::<f64>() / nf;
            nf * ((b / k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&profile);
    let theta_hat: f64 = theta.iter().zip(&profile).map(|(t, l)| t * (l - norm).exp()).sum();
    let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    let a = 10.0;
    let k = k * nf / (nf + a) + a * 0.5 / (nf + a);
    let k = if k.is_nan() { f64::INFINITY } else { k };
    Ok(GpdFit { k, sigma, degenerate: false })
}

/// Generalized Pareto quantile function.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Smoothed, truncated and self-normalized importance log weights for one
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PsisWeights {
    pub log_weights: Vec<f64>,
    pub pareto_k: f64,
    pub degenerate: bool,
    /// Normalized log weight of the largest raw ratio; no weight exceeds it.
    pub log_bound: f64,
}

pub fn tail_length(s: usize) -> usize {
    let s = s as f64;
    (0.2 * s).min(3.0 * s.sqrt()).ceil() as usize
}

/// Pareto smoothing of one vector of log importance ratios.
pub fn psis_weights(log_ratios: &[f64]) -> Result<PsisWeights> {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let m = tail_length(s);
    let mut pareto_k = f64::INFINITY;
    let mut degenerate = false;
    if m >= 5 && m < s {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail_idx = &order[s - m..];
        let cutoff = lw[order[s - m - 1]];
        let exp_cutoff = cutoff.exp();
        let excess: Vec<f64> = tail_idx.iter().map(|&i| (lw[i].exp() - exp_cutoff).max(0.0)).collect();
        let fit = gpd_fit_tail(&excess)?;
        pareto_k = fit.k;
        degenerate = fit.degenerate;
        if fit.k.is_finite() {
            for (j, &i) in tail_idx.iter().enumerate() {
                let p = (j as f64 + 0.5) / m as f64;
                lw[i] = (gpd_quantile(p, fit.k, fit.sigma) + exp_cutoff).ln();
            }
        }
    }
    for w in lw.iter_mut() {
        if *w > 0.0 {
            *w = 0.0;
        }
    }
    let norm = log_sum_exp(&lw);
    for w in lw.iter_mut() {
        *w -= norm;
    }
    Ok(PsisWeights { log_weights: lw, pareto_k, degenerate, log_bound: -norm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub n_draws: usize,
    pub pointwise: Vec<f64>,
    /// In-sample log pointwise predictive density per observation.
    pub pointwise_lpd: Vec<f64>,
    /// `null` in JSON for the degenerate-tail sentinel.
    pub pareto_k: Vec<f64>,
    pub elpd_loo: f64,
    pub se: f64,
    pub lpd: f64,
    pub p_loo: f64,
    pub flagged: Vec<usize>,
    pub degenerate_tails: Vec<usize>,
}

impl LooResult {
    pub fn n_obs(&self) -> usize {
        self.pointwise.len()
    }

    fn from_columns(n_draws: usize, cols: Vec<ColumnResult>) -> Self {
        let pointwise: Vec<f64> = cols.iter().map(|c| c.elpd).collect();
        let pointwise_lpd: Vec<f64> = cols.iter().map(|c| c.lpd).collect();
        let pareto_k: Vec<f64> = cols.iter().map(|c| c.k).collect();
        let flagged = (0..cols.len()).filter(|&i| pareto_k[i] > K_THRESHOLD).collect();
        let degenerate_tails = (0..cols.len()).filter(|&i| cols[i].degenerate).collect();
        let mut out = LooResult {
            n_draws,
            pointwise,
            pointwise_lpd,
            pareto_k,
            elpd_loo: 0.0,
            se: 0.0,
            lpd: 0.0,
            p_loo: 0.0,
            flagged,
            degenerate_tails,
        };
        out.refresh_totals();
        out
    }

    fn refresh_totals(&mut self) {
        let n = self.pointwise.len() as f64;
        self.elpd_loo = self.pointwise.iter().sum();
        self.lpd = self.pointwise_lpd.iter().sum();
        self.p_loo = self.lpd - self.elpd_loo;
        self.se = (n * variance(&self.pointwise)).sqrt();
    }

    pub fn write_pointwise_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["observation", "elpd_loo", "lpd", "pareto_k", "flagged"])?;
        for i in 0..self.n_obs() {
            wr.write_record([
                i.to_string(),
                self.pointwise[i].to_string(),
                self.pointwise_lpd[i].to_string(),
                self.pareto_k[i].to_string(),
                (self.pareto_k[i] > K_THRESHOLD).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct ColumnResult {
    elpd: f64,
    lpd: f64,
    k: f64,
    degenerate: bool,
}

fn column_result(ll: &[f64]) -> Result<ColumnResult> {
    let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
    let w = psis_weights(&ratios)?;
    let terms: Vec<f64> = w.log_weights.iter().zip(ll).map(|(a, b)| a + b).collect();
    Ok(ColumnResult {
        elpd: log_sum_exp(&terms),
        lpd: exact_elpd(ll),
        k: w.pareto_k,
        degenerate: w.degenerate,
    })
}

fn check_column(col: &[f64], obs: usize) -> Result<()> {
    if let Some(d) = col.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("log-likelihood at draw {d}, observation {obs}")));
    }
    Ok(())
}

fn check_draws(s: usize) -> Result<()> {
    if s < MIN_DRAWS {
        return Err(Error::invalid(format!("PSIS-LOO needs at least {MIN_DRAWS} draws, got {s}")));
    }
    Ok(())
}

/// PSIS-LOO from a `draws × observations` log-likelihood matrix.
pub fn psis_loo(log_lik: &[Vec<f64>]) -> Result<LooResult> {
    let s = log_lik.len();
    check_draws(s)?;
    let n = log_lik[0].len();
    if log_lik.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("log-likelihood rows differ in length"));
    }
    let cols = (0..n)
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = log_lik.iter().map(|r| r[i]).collect();
            check_column(&col, i)?;
            column_result(&col)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LooResult::from_columns(s, cols))
}

/// PSIS-LOO over posterior draws of a fitted model, evaluating the
/// likelihood in observation blocks to bound memory.
pub fn model_loo(draws: &[Vec<f64>], dataset: &Dataset, spec: &ModelSpec) -> Result<LooResult> {
    check_draws(draws.len())?;
    let post = Posterior::new(dataset, spec)?;
    let n = dataset.len();
    let block = 512;
    let mut cols = Vec::with_capacity(n);
    let mut lo = 0;
    while lo < n {
        let hi = (lo + block).min(n);
        let rows = draws
            .par_iter()
            .map(|x| post.pointwise_range(x, lo..hi))
            .collect::<Result<Vec<_>>>()?;
        let part = (lo..hi)
            .into_par_iter()
            .map(|i| {
                let col: Vec<f64> = rows.iter().map(|r| r[i - lo]).collect();
                check_column(&col, i)?;
                column_result(&col)
            })
            .collect::<Result<Vec<_>>>()?;
        cols.extend(part);
        lo = hi;
    }
    Ok(LooResult::from_columns(draws.len(), cols))
}

/// `log mean exp` of a held-out observation's log-likelihood draws.
pub fn exact_elpd(ll: &[f64]) -> f64 {
    log_sum_exp(ll) - (ll.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub elpd_loo: f64,
    pub se: f64,
    pub p_loo: f64,
    pub elpd_diff: f64,
    pub se_diff: f64,
}

/// `elpd(a) - elpd(b)` and its paired standard error.
pub fn elpd_difference(a: &LooResult, b: &LooResult) -> Result<(f64, f64)> {
    if a.n_obs() != b.n_obs() {
        return Err(Error::invalid(format!(
            "LOO results cover different observation counts ({} vs {})",
            a.n_obs(),
            b.n_obs()
        )));
    }
    let d: Vec<f64> = a.pointwise.iter().zip(&b.pointwise).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    Ok((d.iter().sum(), (n * variance(&d)).sqrt()))
}

/// Rows sorted best first, differences relative to the best model.
pub fn compare_models(results: &[(&str, &LooResult)]) -> Result<Vec<ComparisonRow>> {
    if results.is_empty() {
        return Err(Error::invalid("no models to compare"));
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[b].1.elpd_loo.total_cmp(&results[a].1.elpd_loo));
    let best = results[order[0]].1;
    order
        .into_iter()
        .map(|i| {
            let (name, r) = results[i];
            let (elpd_diff, se_diff) = elpd_difference(r, best)?;
            Ok(ComparisonRow {
                model: name.to_string(),
                elpd_loo: r.elpd_loo,
                se: r.se,
                p_loo: r.p_loo,
                elpd_diff,
                se_diff,
            })
        })
        .collect()
}

pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$} {:>10} {:>8} {:>10} {:>8} {:>8}", "", "elpd_diff", "se_diff", "elpd_loo", "se", "p_loo");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$} {:>10.1} {:>8.1} {:>10.1} {:>8.1} {:>8.1}",
            r.model, r.elpd_diff, r.se_diff, r.elpd_loo, r.se, r.p_loo
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefitOutcome {
    /// Exact held-out elpd of the left-out observation.
    pub elpd: f64,
    pub max_rhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitReport {
    pub index: usize,
    pub pareto_k: f64,
    pub elpd_psis: f64,
    pub elpd_exact: f64,
    pub max_rhat: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReLooResult {
    pub loo: LooResult,
    pub refits: Vec<RefitReport>,
}

/// Replaces the pointwise elpd of each index with an exact leave-one-out
/// refit; other observations are untouched.
pub fn reloo<F>(loo: &LooResult, indices: &[usize], mut refit: F) -> Result<ReLooResult>
where
    F: FnMut(usize) -> Result<RefitOutcome>,
{
    let mut idx = indices.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if let Some(&bad) = idx.iter().find(|&&i| i >= loo.n_obs()) {
        return Err(Error::IndexOutOfRange(format!("observation {bad} of {}", loo.n_obs())));
    }
    let mut out = loo.clone();
    let mut refits = Vec::with_capacity(idx.len());
    for i in idx {
        let r = refit(i)?;
        if !r.elpd.is_finite() {
            return Err(Error::NonFinite(format!("refit elpd for observation {i}")));
        }
        refits.push(RefitReport {
            index: i,
            pareto_k: loo.pareto_k[i],
            elpd_psis: loo.pointwise[i],
            elpd_exact: r.elpd,
            max_rhat: r.max_rhat,
            converged: r.max_rhat <= REFIT_RHAT_LIMIT,
        });
        out.pointwise[i] = r.elpd;
    }
    out.refresh_totals();
    Ok(ReLooResult { loo: out, refits })
}

/// Refits `spec` without observation `index` and scores the held-out row.
pub fn refit_without(dataset: &Dataset, spec: &ModelSpec, config: &ChainConfig, index: usize) -> Result<RefitOutcome> {
    if index >= dataset.len() {
        return Err(Error::IndexOutOfRange(format!("observation {index} of {}", dataset.len())));
    }
    let train = dataset.without(index);
    let held = dataset.with_rows([index]);
    let batch = run_chains(&Posterior::new(&train, spec)?, config)?;
    let post = Posterior::new(&held, spec)?;
    let ll = batch
        .unconstrained_draws()
        .iter()
        .map(|x| post.pointwise(x).map(|v| v[0]))
        .collect::<Result<Vec<_>>>()?;
    let max_rhat = batch.summary().max_rhat.unwrap_or(f64::NAN);
    Ok(RefitOutcome { elpd: exact_elpd(&ll), max_rhat })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootogramBin {
    pub count: u64,
    pub observed: f64,
    pub expected: f64,
    pub lower: f64,
    pub upper: f64,
    pub sqrt_observed: f64,
    pub sqrt_expected: f64,
    pub sqrt_lower: f64,
    pub sqrt_upper: f64,
    /// `sqrt(expected) - sqrt(observed)`: the gap left below the axis by a
    /// bar hanging from the expected curve.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootogramData {
    pub style: String,
    /// Pointwise central band over draws.
    pub band_mass: f64,
    pub max_count: u64,
    pub n: usize,
    pub bins: Vec<RootogramBin>,
    pub observed_above_max: f64,
    pub expected_above_max: f64,
}

pub const ROOTOGRAM_BAND: f64 = 0.95;

fn frequencies(ys: &[u64], max_count: u64) -> (Vec<f64>, f64) {
    let mut f = vec![0.0; max_count as usize + 1];
    let mut over = 0.0;
    for &y in ys {
        if y <= max_count {
            f[y as usize] += 1.0;
        } else {
            over += 1.0;
        }
    }
    (f, over)
}

fn check_predictive(observed: &[u64], predictive: &[Vec<u64>]) -> Result<()> {
    if predictive.is_empty() {
        return Err(Error::invalid("no predictive draws"));
    }
    if let Some(d) = predictive.iter().position(|p| p.len() != observed.len()) {
        return Err(Error::invalid(format!(
            "predictive draw {d} has {} values, observed has {}",
            predictive[d].len(),
            observed.len()
        )));
    }
    Ok(())
}

pub fn rootogram(observed: &[u64], predictive: &[Vec<u64>], max_count: u64) -> Result<RootogramData> {
    if max_count < 1 {
        return Err(Error::invalid("rootogram max_count must be at least 1"));
    }
    check_predictive(observed, predictive)?;
    let (obs, obs_over) = frequencies(observed, max_count);
    let per_draw: Vec<(Vec<f64>, f64)> = predictive.par_iter().map(|p| frequencies(p, max_count)).collect();
    let tail = (1.0 - ROOTOGRAM_BAND) / 2.0;
    let bins = (0..=max_count as usize)
        .map(|c| {
            let f: Vec<f64> = per_draw.iter().map(|(v, _)| v[c]).collect();
            let s = sorted(&f);
            let expected = mean(&f);
            let lower = quantile_sorted(&s, tail);
            let upper = quantile_sorted(&s, 1.0 - tail);
            RootogramBin {
                count: c as u64,
                observed: obs[c],
                expected,
                lower,
                upper,
                sqrt_observed: obs[c].sqrt(),
                sqrt_expected: expected.sqrt(),
                sqrt_lower: lower.sqrt(),
                sqrt_upper: upper.sqrt(),
                deviation: expected.sqrt() - obs[c].sqrt(),
            }
        })
        .collect();
    let over: Vec<f64> = per_draw.iter().map(|(_, o)| *o).collect();
    Ok(RootogramData {
        style: "suspended".into(),
        band_mass: ROOTOGRAM_BAND,
        max_count,
        n: observed.len(),
        bins,
        observed_above_max: obs_over,
        expected_above_max: mean(&over),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpcStatistic {
    PropZero,
    Q95,
    Q99,
}

impl PpcStatistic {
    pub fn name(self) -> &'static str {
        match self {
            PpcStatistic::PropZero => "prop_zero",
            PpcStatistic::Q95 => "q95",
            PpcStatistic::Q99 => "q99",
        }
    }

    pub fn compute(self, ys: &[u64]) -> f64 {
        match self {
            PpcStatistic::PropZero => {
                if ys.is_empty() {
                    f64::NAN
                } else {
                    ys.iter().filter(|&&y| y == 0).count() as f64 / ys.len() as f64
                }
            }
            PpcStatistic::Q95 => nearest_rank(ys, 95) as f64,
            PpcStatistic::Q99 => nearest_rank(ys, 99) as f64,
        }
    }
}

impl FromStr for PpcStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prop_zero" => Ok(PpcStatistic::PropZero),
            "q95" => Ok(PpcStatistic::Q95),
            "q99" => Ok(PpcStatistic::Q99),
            other => Err(Error::invalid(format!("unsupported statistic '{other}' (expected prop_zero, q95 or q99)"))),
        }
    }
}

/// Nearest-rank percentile: the smallest value whose cumulative proportion
/// exceeds `pct` percent, so 95 zeros, 4 ones and a five give q95 = 1.
pub fn nearest_rank(ys: &[u64], pct: u32) -> u64 {
    if ys.is_empty() {
        return 0;
    }
    let mut s = ys.to_vec();
    s.sort_unstable();
    let idx = (pct as usize * s.len() / 100).min(s.len() - 1);
    s[idx]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcResult {
    pub statistic: PpcStatistic,
    pub observed: f64,
    pub draws: Vec<f64>,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

pub const PPC_BAND: f64 = 0.95;

pub fn ppc_stat(observed: &[u64], predictive: &[Vec<u64>], statistic: PpcStatistic) -> Result<PpcResult> {
    check_predictive(observed, predictive)?;
    let draws: Vec<f64> = predictive.par_iter().map(|p| statistic.compute(p)).collect();
    let (median, lower, upper) = crate::stats::central_interval(&draws, PPC_BAND);
    Ok(PpcResult {
        statistic,
        observed: statistic.compute(observed),
        draws,
        median,
        lower,
        upper,
        mass: PPC_BAND,
    })
}

/// Two statistics per predictive draw, e.g. `(q95, q99)` for prior checks.
pub fn ppc_pairs(predictive: &[Vec<u64>], a: PpcStatistic, b: PpcStatistic) -> Vec<(f64, f64)> {
    predictive.par_iter().map(|p| (a.compute(p), b.compute(p))).collect()
}
