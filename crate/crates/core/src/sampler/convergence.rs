//! Rank-normalized split R-hat and effective sample size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{average_ranks, mean, normal_quantile, quantile};

/// A convergence statistic, flagged when the draws have no variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub value: f64,
    pub degenerate: bool,
}

fn check(chains: &[Vec<f64>]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::invalid("convergence statistics need at least 2 chains"));
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("convergence statistics need at least 4 draws per chain, equally many per chain"));
    }
    Ok(n)
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|&x| x == first) || chains.iter().flatten().any(|x| !x.is_finite())
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let half = n / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        out.push(c[..half].to_vec());
        out.push(c[n - half..].to_vec());
    }
    out
}

fn z_scale(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len() as f64;
    let ranks = average_ranks(&flat);
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal_quantile((r - 0.375) / (s + 0.25)))
        .collect();
    let mut out = Vec::with_capacity(chains.len());
    let mut at = 0;
    for c in chains {
        out.push(z[at..at + c.len()].to_vec());
        at += c.len();
    }
    out
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| crate::stats::variance(c)).collect();
    let w = mean(&vars);
    let b = n * crate::stats::variance(&means);
    let var_hat = (n - 1.0) / n * w + b / n;
    (var_hat / w).sqrt()
}

/// Rank-normalized split R-hat: the larger of the bulk and folded-tail values.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Statistic> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(Statistic { value: 1.0, degenerate: true });
    }
    let s = split(chains);
    let bulk = rhat_basic(&z_scale(&s));
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let med = quantile(&flat, 0.5);
    let folded: Vec<Vec<f64>> = s.iter().map(|c| c.iter().map(|x| (x - med).abs()).collect()).collect();
    let tail = if is_constant(&folded) { 1.0 } else { rhat_basic(&z_scale(&folded)) };
    let value = bulk.max(tail);
    Ok(Statistic { value, degenerate: !value.is_finite() })
}

fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let len = (2 * n).next_power_of_two();
    let m = mean(x);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (len as f64 * n as f64)).collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, &mut planner)).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += crate::stats::variance(&means);
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_t.min(n)].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size (rank-normalized split chains).
pub fn ess(chains: &[Vec<f64>]) -> Result<Statistic> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(Statistic { value: 0.0, degenerate: true });
    }
    Ok(Statistic { value: ess_basic(&z_scale(&split(chains))), degenerate: false })
}

/// Tail effective sample size: the smaller ESS of the 5% and 95% quantile
/// indicators.
pub fn ess_tail(chains: &[Vec<f64>]) -> Result<Statistic> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(Statistic { value: 0.0, degenerate: true });
    }
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = split(chains);
    let mut worst = f64::INFINITY;
    for p in [0.05, 0.95] {
        let q = quantile(&flat, p);
        let ind: Vec<Vec<f64>> = s
            .iter()
            .map(|c| c.iter().map(|&x| if x <= q { 1.0 } else { 0.0 }).collect())
            .collect();
        let v = if is_constant(&ind) { 0.0 } else { ess_basic(&ind) };
        worst = worst.min(v);
    }
    Ok(Statistic { value: worst, degenerate: false })
}
