//! Leapfrog integration and the multinomial No-U-Turn transition.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::stats::log_sum_exp2;

/// A differentiable log density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` and writes its gradient into `grad`. Errors mark
    /// points where the density cannot be evaluated.
    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn unconstrained_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    fn constrained_names(&self) -> Vec<String> {
        self.unconstrained_names()
    }
}

impl LogDensity for crate::model::Posterior<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.log_density_and_gradient(x, grad)
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        self.layout.constrain(x).expect("sampler positions match the layout")
    }

    fn unconstrained_names(&self) -> Vec<String> {
        self.layout.unconstrained_names()
    }

    fn constrained_names(&self) -> Vec<String> {
        self.layout.constrained_names()
    }
}

/// Position, momentum and the cached density at the position.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_p: f64,
}

impl PhasePoint {
    pub fn new<M: LogDensity + ?Sized>(model: &M, q: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; q.len()];
        let log_p = model.log_density_gradient(&q, &mut grad)?;
        let p = vec![0.0; q.len()];
        Ok(PhasePoint { q, p, grad, log_p })
    }

    pub fn kinetic(&self, inv_metric: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        -self.log_p + self.kinetic(inv_metric)
    }

    fn velocity(&self, inv_metric: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_metric).map(|(p, m)| p * m).collect()
    }
}

/// One leapfrog step of size `eps`; on error the point is left mid-step and
/// must be discarded.
pub fn leapfrog<M: LogDensity + ?Sized>(model: &M, z: &mut PhasePoint, eps: f64, inv_metric: &[f64]) -> Result<()> {
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_metric) {
        *q += eps * m * p;
    }
    z.log_p = model.log_density_gradient(&z.q, &mut z.grad)?;
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
    Ok(())
}

pub fn sample_momentum<R: Rng + ?Sized>(z: &mut PhasePoint, inv_metric: &[f64], rng: &mut R) {
    for (p, m) in z.p.iter_mut().zip(inv_metric) {
        let u: f64 = rng.sample(StandardNormal);
        *p = u / m.sqrt();
    }
}

/// Per-transition statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub treedepth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NutsOptions {
    pub max_treedepth: usize,
    pub max_delta_h: f64,
}

impl Default for NutsOptions {
    fn default() -> Self {
        NutsOptions { max_treedepth: 10, max_delta_h: 1000.0 }
    }
}

struct Tree<'a, M: LogDensity + ?Sized> {
    model: &'a M,
    eps: f64,
    inv_metric: &'a [f64],
    h0: f64,
    max_delta_h: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Ends of a subtree: momenta and velocities at its first and last states.
struct Edges {
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    v_beg: Vec<f64>,
    v_end: Vec<f64>,
}

impl<M: LogDensity + ?Sized> Tree<'_, M> {
    /// Extends the trajectory from `z` by `2^depth` steps. Returns `None` if
    /// the subtree diverged or turned, else its edges.
    fn build<R: Rng + ?Sized>(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        rho: &mut [f64],
        log_sum_weight: &mut f64,
        rng: &mut R,
    ) -> Option<Edges> {
        if depth == 0 {
            let ok = leapfrog(self.model, z, self.eps, self.inv_metric).is_ok();
            self.n_leapfrog += 1;
            let mut h = if ok { z.hamiltonian(self.inv_metric) } else { f64::INFINITY };
            if h.is_nan() {
                h = f64::INFINITY;
            }
            if h - self.h0 > self.max_delta_h {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp2(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            if self.divergent {
                return None;
            }
            z_propose.clone_from(z);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            let v = z.velocity(self.inv_metric);
            return Some(Edges { p_beg: z.p.clone(), p_end: z.p.clone(), v_beg: v.clone(), v_end: v });
        }
        let n = z.q.len();
        let mut rho_init = vec![0.0; n];
        let mut lsw_init = f64::NEG_INFINITY;
        let init = self.build(depth - 1, z, z_propose, &mut rho_init, &mut lsw_init, rng)?;

        let mut z_final = z.clone();
        let mut rho_final = vec![0.0; n];
        let mut lsw_final = f64::NEG_INFINITY;
        let fin = self.build(depth - 1, z, &mut z_final, &mut rho_final, &mut lsw_final, rng)?;

        let lsw_subtree = log_sum_exp2(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp2(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            std::mem::swap(z_propose, &mut z_final);
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&init.v_beg, &fin.v_end, &rho_subtree);
        persist &= no_u_turn(&init.v_beg, &fin.v_beg, &add(&rho_init, &fin.p_beg));
        persist &= no_u_turn(&init.v_end, &fin.v_end, &add(&rho_final, &init.p_end));
        if !persist {
            return None;
        }
        Some(Edges { p_beg: init.p_beg, p_end: fin.p_end, v_beg: init.v_beg, v_end: fin.v_end })
    }
}

/// One No-U-Turn transition from `z` (whose momentum is resampled).
pub fn nuts_transition<M: LogDensity + ?Sized, R: Rng + ?Sized>(
    model: &M,
    z: &mut PhasePoint,
    eps: f64,
    inv_metric: &[f64],
    opts: NutsOptions,
    rng: &mut R,
) -> TransitionStats {
    sample_momentum(z, inv_metric, rng);
    let h0 = z.hamiltonian(inv_metric);
    let n = z.q.len();
    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut z_sample = z.clone();
    let mut z_propose = z.clone();

    let v0 = z.velocity(inv_metric);
    // Outer momenta and velocities of the whole trajectory, per end.
    let (mut p_fwd_bck, mut p_fwd_fwd) = (z.p.clone(), z.p.clone());
    let (mut v_fwd_bck, mut v_fwd_fwd) = (v0.clone(), v0.clone());
    let (mut p_bck_fwd, mut p_bck_bck) = (z.p.clone(), z.p.clone());
    let (mut v_bck_fwd, mut v_bck_bck) = (v0.clone(), v0);
    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;
    let mut depth = 0;

    let mut tree = Tree {
        model,
        eps,
        inv_metric,
        h0,
        max_delta_h: opts.max_delta_h,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    while depth < opts.max_treedepth {
        let mut rho_fwd = vec![0.0; n];
        let mut rho_bck = vec![0.0; n];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let forward = rng.random::<f64>() > 0.5;
        let valid = if forward {
            // The existing trajectory becomes the backward part.
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_fwd);
            v_bck_fwd.clone_from(&v_fwd_fwd);
            tree.eps = eps;
            match tree.build(depth, &mut z_fwd, &mut z_propose, &mut rho_fwd, &mut lsw_subtree, rng) {
                Some(e) => {
                    p_fwd_bck = e.p_beg;
                    p_fwd_fwd = e.p_end;
                    v_fwd_bck = e.v_beg;
                    v_fwd_fwd = e.v_end;
                    true
                }
                None => false,
            }
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_bck);
            v_fwd_bck.clone_from(&v_bck_bck);
            tree.eps = -eps;
            match tree.build(depth, &mut z_bck, &mut z_propose, &mut rho_bck, &mut lsw_subtree, rng) {
                Some(e) => {
                    p_bck_fwd = e.p_beg;
                    p_bck_bck = e.p_end;
                    v_bck_fwd = e.v_beg;
                    v_bck_bck = e.v_end;
                    true
                }
                None => false,
            }
        };
        if !valid {
            break;
        }
        depth += 1;
        if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            z_sample.clone_from(&z_propose);
        }
        log_sum_weight = log_sum_exp2(log_sum_weight, lsw_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&v_bck_bck, &v_fwd_fwd, &rho);
        persist &= no_u_turn(&v_bck_bck, &v_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&v_bck_fwd, &v_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }

    let accept_stat = tree.sum_metro_prob / tree.n_leapfrog.max(1) as f64;
    let stats = TransitionStats {
        accept_stat,
        treedepth: depth,
        n_leapfrog: tree.n_leapfrog,
        divergent: tree.divergent,
        energy: z_sample.hamiltonian(inv_metric),
    };
    *z = z_sample;
    stats
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Zero-mean Gaussian with precision matrix `prec` (row-major).
    pub struct Gaussian {
        pub prec: Vec<f64>,
        pub n: usize,
    }

    impl Gaussian {
        pub fn standard(n: usize) -> Self {
            let mut prec = vec![0.0; n * n];
            for i in 0..n {
                prec[i * n + i] = 1.0;
            }
            Gaussian { prec, n }
        }
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.n
        }

        fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            let mut lp = 0.0;
            for i in 0..self.n {
                let px: f64 = (0..self.n).map(|j| self.prec[i * self.n + j] * x[j]).sum();
                grad[i] = -px;
                lp -= 0.5 * x[i] * px;
            }
            if lp.is_finite() {
                Ok(lp)
            } else {
                Err(Error::NonFinite("gaussian".into()))
            }
        }
    }

    #[test]
    fn quadratic_gradient_is_minus_x() {
        let g = Gaussian::standard(3);
        let mut grad = vec![0.0; 3];
        g.log_density_gradient(&[0.5, -2.0, 3.0], &mut grad).unwrap();
        assert_eq!(grad, vec![-0.5, 2.0, -3.0]);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let g = Gaussian { prec: vec![2.0, 0.5, 0.5, 1.0], n: 2 };
        let m = [1.0, 0.7];
        let mut z = PhasePoint::new(&g, vec![0.3, -1.1]).unwrap();
        z.p = vec![0.9, 0.4];
        let start = z.clone();
        for _ in 0..20 {
            leapfrog(&g, &mut z, 0.1, &m).unwrap();
        }
        for p in z.p.iter_mut() {
            *p = -*p;
        }
        for _ in 0..20 {
            leapfrog(&g, &mut z, 0.1, &m).unwrap();
        }
        for i in 0..2 {
            assert!((z.q[i] - start.q[i]).abs() < 1e-10);
            assert!((z.p[i] + start.p[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn leapfrog_still_point() {
        struct Flat;
        impl LogDensity for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn log_density_gradient(&self, _: &[f64], g: &mut [f64]) -> Result<f64> {
                g.fill(0.0);
                Ok(0.0)
            }
        }
        let mut z = PhasePoint::new(&Flat, vec![1.5, -0.5]).unwrap();
        leapfrog(&Flat, &mut z, 0.3, &[1.0, 1.0]).unwrap();
        assert_eq!(z.q, vec![1.5, -0.5]);
    }

    #[test]
    fn energy_error_is_second_order() {
        let g = Gaussian::standard(1);
        let err = |eps: f64| {
            let mut z = PhasePoint::new(&g, vec![1.0]).unwrap();
            z.p = vec![0.5];
            let h0 = z.hamiltonian(&[1.0]);
            let steps = (1.0 / eps).round() as usize;
            let mut worst = 0.0f64;
            for _ in 0..steps {
                leapfrog(&g, &mut z, eps, &[1.0]).unwrap();
                worst = worst.max((z.hamiltonian(&[1.0]) - h0).abs());
            }
            worst
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn linear_map_has_unit_jacobian() {
        // For a quadratic target one leapfrog step is linear in (q, p); its
        // matrix is recovered column by column and has determinant 1.
        let g = Gaussian { prec: vec![2.0, 0.5, 0.5, 1.0], n: 2 };
        let m = [1.0, 0.5];
        let map = |v: [f64; 4]| {
            let mut z = PhasePoint::new(&g, vec![v[0], v[1]]).unwrap();
            z.p = vec![v[2], v[3]];
            leapfrog(&g, &mut z, 0.37, &m).unwrap();
            [z.q[0], z.q[1], z.p[0], z.p[1]]
        };
        let mut a = [[0.0; 4]; 4];
        for c in 0..4 {
            let mut e = [0.0; 4];
            e[c] = 1.0;
            let col = map(e);
            for r in 0..4 {
                a[r][c] = col[r];
            }
        }
        // Gaussian elimination determinant.
        let mut det = 1.0;
        for i in 0..4 {
            let piv = (i..4).max_by(|&x, &y| a[x][i].abs().total_cmp(&a[y][i].abs())).unwrap();
            if piv != i {
                a.swap(piv, i);
                det = -det;
            }
            det *= a[i][i];
            for r in i + 1..4 {
                let f = a[r][i] / a[i][i];
                for c in i..4 {
                    a[r][c] -= f * a[i][c];
                }
            }
        }
        assert!((det - 1.0).abs() < 1e-12, "{det}");
    }

    #[test]
    fn transitions_preserve_a_gaussian() {
        let g = Gaussian::standard(2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut z = PhasePoint::new(&g, vec![0.1, -0.2]).unwrap();
        let n = 10_000;
        let mut sum = [0.0; 2];
        let mut sum_sq = [0.0; 2];
        for _ in 0..n {
            let s = nuts_transition(&g, &mut z, 0.9, &[1.0, 1.0], NutsOptions::default(), &mut rng);
            assert!(!s.divergent);
            for i in 0..2 {
                sum[i] += z.q[i];
                sum_sq[i] += z.q[i] * z.q[i];
            }
        }
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let var = sum_sq[i] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.05, "mean {mean}");
            assert!((var - 1.0).abs() < 0.08, "var {var}");
        }
    }
}
