//! Cholesky factors of correlation matrices: the unconstrained transform via
//! canonical partial correlations, its log-Jacobian, the LKJ density on the
//! factor, and LKJ sampling.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::dual::Dual;

/// Largest block dimension supported (intercept plus three slopes).
pub const MAX_DIM: usize = 4;
/// Free parameters of a `MAX_DIM`-dimensional correlation factor.
pub const MAX_FREE: usize = MAX_DIM * (MAX_DIM - 1) / 2;

pub type D = Dual<MAX_FREE>;

pub fn n_free(k: usize) -> usize {
    k * (k - 1) / 2
}

/// Lower Cholesky factor (row-major `k*k`) together with the log-Jacobian of
/// the transform plus the LKJ(`eta`) log density of the factor (without its
/// normalizing constant), all carrying derivatives with respect to `y`.
///
/// `y` holds the free parameters row by row: (1,0), (2,0), (2,1), (3,0), ...
pub struct CorrFactor {
    pub k: usize,
    pub l: Vec<D>,
    pub log_density: D,
}

pub fn corr_factor(k: usize, y: &[f64], eta: f64) -> CorrFactor {
    debug_assert_eq!(y.len(), n_free(k));
    assert!(k <= MAX_DIM, "correlation blocks above {MAX_DIM} dimensions unsupported");
    let mut l = vec![D::constant(0.0); k * k];
    let mut log_density = D::constant(0.0);
    if k == 0 {
        return CorrFactor { k, l, log_density };
    }
    l[0] = D::constant(1.0);
    let mut idx = 0;
    for i in 1..k {
        let yv = D::variable(y[idx], idx);
        log_density = log_density + yv.ln_sech2();
        let z = yv.tanh();
        idx += 1;
        l[i * k] = z;
        let mut sum_sq = z.square();
        for j in 1..i {
            let yv = D::variable(y[idx], idx);
            log_density = log_density + yv.ln_sech2();
            let z = yv.tanh();
            idx += 1;
            let rem = 1.0 - sum_sq;
            log_density = log_density + rem.ln().scale(0.5);
            let lij = z * rem.sqrt();
            l[i * k + j] = lij;
            sum_sq = sum_sq + lij.square();
        }
        let diag = (1.0 - sum_sq).sqrt();
        l[i * k + i] = diag;
        let power = (k - i - 1) as f64 + 2.0 * eta - 2.0;
        log_density = log_density + diag.ln().scale(power);
    }
    CorrFactor { k, l, log_density }
}

/// Plain-value Cholesky factor for `y`.
pub fn corr_cholesky(k: usize, y: &[f64]) -> Vec<f64> {
    corr_factor(k, y, 1.0).l.iter().map(|d| d.v).collect()
}

/// Inverse of [`corr_cholesky`].
pub fn corr_unconstrain(k: usize, l: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(n_free(k));
    for i in 1..k {
        let mut sum_sq = 0.0f64;
        for j in 0..i {
            let lij = l[i * k + j];
            let z = if j == 0 { lij } else { lij / (1.0 - sum_sq).sqrt() };
            y.push(z.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh());
            sum_sq += lij * lij;
        }
    }
    y
}

/// `L L^T` as a row-major `k*k` matrix.
pub fn correlation_from_cholesky(k: usize, l: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] = (0..=i.min(j)).map(|m| l[i * k + m] * l[j * k + m]).sum();
        }
    }
    out
}

pub fn cholesky(k: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[i * k + m] * l[j * k + m]).sum();
            if i == j {
                let v = a[i * k + i] - s;
                if v <= 0.0 {
                    return None;
                }
                l[i * k + i] = v.sqrt();
            } else {
                l[i * k + j] = (a[i * k + j] - s) / l[j * k + j];
            }
        }
    }
    Some(l)
}

/// Draws a `k`-dimensional correlation matrix from LKJ(`eta`) with the vine
/// method and returns its Cholesky factor.
pub fn sample_lkj_cholesky<R: Rng + ?Sized>(k: usize, eta: f64, rng: &mut R) -> Vec<f64> {
    if k <= 1 {
        return vec![1.0; k];
    }
    let mut partial = vec![0.0; k * k];
    let mut corr = vec![0.0; k * k];
    for i in 0..k {
        corr[i * k + i] = 1.0;
    }
    let mut beta = eta + (k as f64 - 1.0) / 2.0;
    for m in 0..k - 1 {
        beta -= 0.5;
        let dist = Beta::new(beta, beta).expect("positive beta parameters");
        for i in m + 1..k {
            let p = 2.0 * dist.sample(rng) - 1.0;
            partial[m * k + i] = p;
            let mut r = p;
            for l in (0..m).rev() {
                r = r * ((1.0 - partial[l * k + i].powi(2)) * (1.0 - partial[l * k + m].powi(2))).sqrt()
                    + partial[l * k + i] * partial[l * k + m];
            }
            corr[m * k + i] = r;
            corr[i * k + m] = r;
        }
    }
    cholesky(k, &corr).expect("vine draws are positive definite")
}
