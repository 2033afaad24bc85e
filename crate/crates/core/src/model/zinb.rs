//! Zero-inflated negative-binomial likelihood.
//!
//! With inflation probability `xi`, mean `mu` and shape `phi`:
//!
//! ```text
//! p(0) = xi + (1 - xi) NB(0 | mu, phi)
//! p(y) = (1 - xi) NB(y | mu, phi)        y > 0
//! ```
//!
//! where the negative binomial has variance `mu + mu^2 / phi`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::stats::{digamma, ln_gamma, log_sum_exp2, logistic, softplus};

/// `ln NB(y | mu, phi)`.
pub fn nb_log_pmf(y: u64, mu: f64, phi: f64) -> f64 {
    let log_q = phi.ln() - (mu + phi).ln();
    if y == 0 {
        return phi * log_q;
    }
    let yf = y as f64;
    ln_gamma(yf + phi) - ln_gamma(phi) - ln_gamma(yf + 1.0) + phi * log_q + yf * (mu.ln() - (mu + phi).ln())
}

/// `ln p(y | mu, phi, xi)` for the zero-inflated model.
pub fn zinb_log_pmf(y: u64, mu: f64, phi: f64, xi: f64) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be positive and finite, got {mu}")));
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::invalid(format!("phi must be positive and finite, got {phi}")));
    }
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::invalid(format!("xi must lie in [0, 1], got {xi}")));
    }
    if xi == 1.0 {
        return Ok(if y == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let nb = nb_log_pmf(y, mu, phi);
    if xi == 0.0 {
        return Ok(nb);
    }
    let log_keep = (-xi).ln_1p();
    Ok(if y == 0 {
        log_sum_exp2(xi.ln(), log_keep + nb)
    } else {
        log_keep + nb
    })
}

/// Log likelihood of one observation on the linear-predictor scale with its
/// partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZinbTerm {
    pub log_lik: f64,
    pub d_eta_mu: f64,
    pub d_eta_zi: f64,
    pub d_log_phi: f64,
}

/// `eta_mu = ln mu`, `eta_zi = logit xi`; `phi` must equal `exp(log_phi)`.
#[inline]
pub fn zinb_term(y: u64, eta_mu: f64, eta_zi: f64, log_phi: f64, phi: f64, want_grad: bool) -> ZinbTerm {
    let log_mu_phi = log_sum_exp2(eta_mu, log_phi);
    let log_q = log_phi - log_mu_phi; // ln(phi / (mu + phi))
    let p = (eta_mu - log_mu_phi).exp(); // mu / (mu + phi)
    if y == 0 {
        let log_xi = -softplus(-eta_zi);
        let log_keep = -softplus(eta_zi);
        let a = log_xi;
        let b = log_keep + phi * log_q;
        let ll = log_sum_exp2(a, b);
        if !want_grad {
            return ZinbTerm { log_lik: ll, d_eta_mu: 0.0, d_eta_zi: 0.0, d_log_phi: 0.0 };
        }
        let wa = (a - ll).exp();
        let wb = (b - ll).exp();
        let xi = logistic(eta_zi);
        ZinbTerm {
            log_lik: ll,
            d_eta_mu: -wb * phi * p,
            d_eta_zi: wa * (1.0 - xi) - wb * xi,
            d_log_phi: wb * phi * (log_q + p),
        }
    } else {
        let yf = y as f64;
        let q = (log_q).exp();
        let lg = ln_gamma(yf + phi) - ln_gamma(phi) - ln_gamma(yf + 1.0);
        let ll = -softplus(eta_zi) + lg + phi * log_q + yf * (eta_mu - log_mu_phi);
        if !want_grad {
            return ZinbTerm { log_lik: ll, d_eta_mu: 0.0, d_eta_zi: 0.0, d_log_phi: 0.0 };
        }
        ZinbTerm {
            log_lik: ll,
            d_eta_mu: yf * q - phi * p,
            d_eta_zi: -logistic(eta_zi),
            d_log_phi: phi * (digamma(yf + phi) - digamma(phi) + log_q) + phi * p - yf * q,
        }
    }
}

/// Count-dependent constants of [`zinb_term_cached`] for one `y > 0` at a
/// fixed `phi`: `ln G(y + phi) - ln G(phi) - ln G(y + 1)` and
/// `psi(y + phi) - psi(phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountConstants {
    pub log_gamma_ratio: f64,
    pub digamma_diff: f64,
}

impl CountConstants {
    pub fn new(y: u64, phi: f64, want_grad: bool) -> Self {
        let yf = y as f64;
        CountConstants {
            log_gamma_ratio: ln_gamma(yf + phi) - ln_gamma(phi) - ln_gamma(yf + 1.0),
            digamma_diff: if want_grad { digamma(yf + phi) - digamma(phi) } else { 0.0 },
        }
    }
}

/// Same value and derivatives as [`zinb_term`], using precomputed count
/// constants (ignored when `y == 0`) and probability-scale arithmetic for
/// zeros where that is safe.
#[inline]
pub fn zinb_term_cached(
    y: u64,
    eta_mu: f64,
    eta_zi: f64,
    log_phi: f64,
    phi: f64,
    cc: CountConstants,
    want_grad: bool,
) -> ZinbTerm {
    let t = (eta_mu - log_phi).exp(); // mu / phi
    if y == 0 {
        let log_q = -t.ln_1p();
        let nb0 = (phi * log_q).exp();
        let xi = logistic(eta_zi);
        let keep = 1.0 - xi;
        let lik = xi + keep * nb0;
        if !(lik > 1e-280) || !(t.is_finite()) {
            return zinb_term(y, eta_mu, eta_zi, log_phi, phi, want_grad);
        }
        let ll = lik.ln();
        if !want_grad {
            return ZinbTerm { log_lik: ll, d_eta_mu: 0.0, d_eta_zi: 0.0, d_log_phi: 0.0 };
        }
        let wb = keep * nb0 / lik;
        let wa = 1.0 - wb;
        let p = t / (1.0 + t);
        return ZinbTerm {
            log_lik: ll,
            d_eta_mu: -wb * phi * p,
            d_eta_zi: wa * keep - wb * xi,
            d_log_phi: wb * phi * (log_q + p),
        };
    }
    if !t.is_finite() {
        return zinb_term(y, eta_mu, eta_zi, log_phi, phi, want_grad);
    }
    let yf = y as f64;
    let log1t = t.ln_1p();
    let log_q = -log1t; // ln(phi / (mu + phi))
    let log_p = (eta_mu - log_phi) - log1t; // ln(mu / (mu + phi))
    let ll = -softplus(eta_zi) + cc.log_gamma_ratio + phi * log_q + yf * log_p;
    if !want_grad {
        return ZinbTerm { log_lik: ll, d_eta_mu: 0.0, d_eta_zi: 0.0, d_log_phi: 0.0 };
    }
    let p = t / (1.0 + t);
    let q = 1.0 - p;
    ZinbTerm {
        log_lik: ll,
        d_eta_mu: yf * q - phi * p,
        d_eta_zi: -logistic(eta_zi),
        d_log_phi: phi * (cc.digamma_diff + log_q) + phi * p - yf * q,
    }
}

/// NB cumulative probabilities `P(Y <= c)` for `c = 0..=max`.
pub fn nb_cdf(max: u64, mu: f64, phi: f64) -> Vec<f64> {
    let log_q = phi.ln() - (mu + phi).ln();
    let log_p = mu.ln() - (mu + phi).ln();
    let mut out = Vec::with_capacity(max as usize + 1);
    let mut log_pmf = phi * log_q;
    let mut acc = 0.0;
    for y in 0..=max {
        if y > 0 {
            let yf = y as f64;
            log_pmf += ((yf - 1.0 + phi) / yf).ln() + log_p;
        }
        acc += log_pmf.exp();
        out.push(acc.min(1.0));
    }
    out
}

/// ZINB cumulative probabilities `P(Y <= c)` for `c = 0..=max`.
pub fn zinb_cdf(max: u64, mu: f64, phi: f64, xi: f64) -> Vec<f64> {
    nb_cdf(max, mu, phi)
        .into_iter()
        .map(|f| (xi + (1.0 - xi) * f).min(1.0))
        .collect()
}

/// Draws from NB(mu, phi) as a gamma-Poisson mixture.
pub fn sample_nb<R: Rng + ?Sized>(mu: f64, phi: f64, rng: &mut R) -> u64 {
    if !(mu > 0.0) {
        return 0;
    }
    let rate = Gamma::new(phi, mu / phi).map(|g| g.sample(rng)).unwrap_or(mu);
    if !(rate > 0.0) {
        return 0;
    }
    match Poisson::new(rate.min(1e15)) {
        Ok(p) => {
            let v: f64 = p.sample(rng);
            v as u64
        }
        Err(_) => 0,
    }
}

pub fn sample_zinb<R: Rng + ?Sized>(mu: f64, phi: f64, xi: f64, rng: &mut R) -> u64 {
    if rng.random::<f64>() < xi {
        0
    } else {
        sample_nb(mu, phi, rng)
    }
}
