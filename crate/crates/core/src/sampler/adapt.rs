//! Warmup adaptation: dual-averaging step size, windowed diagonal metric and
//! the initial step-size heuristic.

use rand::Rng;

use super::nuts::{leapfrog, sample_momentum, LogDensity, PhasePoint};
use crate::error::{Error, Result};

/// Dual averaging toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct StepSizeAdaptation {
    pub delta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub t0: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdaptation {
    pub fn new(delta: f64) -> Self {
        StepSizeAdaptation {
            delta,
            gamma: 0.05,
            kappa: 0.75,
            t0: 10.0,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size after observing `accept_stat`.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let w = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    /// Step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Windowed estimation of the inverse diagonal metric.
#[derive(Debug, Clone)]
pub struct MetricAdaptation {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    base_window: usize,
    window_counter: usize,
    window_size: usize,
    next_window: usize,
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MetricAdaptation {
    pub fn new(dim: usize, num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75usize, 50usize, 25usize);
        if init_buffer + base_window + term_buffer > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base_window = num_warmup - (init_buffer + term_buffer);
        }
        MetricAdaptation {
            num_warmup,
            init_buffer,
            term_buffer,
            base_window,
            window_counter: 0,
            window_size: base_window,
            next_window: init_buffer + base_window - 1,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    /// Buffer sizes `(initial, first window, terminal)`.
    pub fn buffers(&self) -> (usize, usize, usize) {
        (self.init_buffer, self.base_window, self.term_buffer)
    }

    fn in_window(&self) -> bool {
        self.window_counter >= self.init_buffer
            && self.window_counter < self.num_warmup - self.term_buffer
            && self.window_counter != self.num_warmup
    }

    fn end_of_window(&self) -> bool {
        self.window_counter == self.next_window && self.window_counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.window_counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    /// Records `q`; at the end of a window writes the regularized variance
    /// into `inv_metric` and returns true.
    pub fn learn(&mut self, q: &[f64], inv_metric: &mut [f64]) -> bool {
        if self.in_window() {
            self.n += 1;
            let nf = self.n as f64;
            for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(q) {
                let d = x - *m;
                *m += d / nf;
                *s += d * (x - *m);
            }
        }
        if self.end_of_window() {
            self.compute_next_window();
            let n = self.n as f64;
            for (out, s) in inv_metric.iter_mut().zip(&self.m2) {
                let var = s / (n - 1.0);
                *out = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
            }
            self.n = 0;
            self.mean.fill(0.0);
            self.m2.fill(0.0);
            self.window_counter += 1;
            return true;
        }
        self.window_counter += 1;
        false
    }
}

/// Doubles or halves `eps` until one leapfrog step crosses an acceptance
/// probability of 0.8.
pub fn init_step_size<M: LogDensity + ?Sized, R: Rng + ?Sized>(
    model: &M,
    z: &PhasePoint,
    mut eps: f64,
    inv_metric: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let threshold = 0.8f64.ln();
    let delta_h = |eps: f64, rng: &mut R| -> f64 {
        let mut w = z.clone();
        sample_momentum(&mut w, inv_metric, rng);
        let h0 = w.hamiltonian(inv_metric);
        let h = match leapfrog(model, &mut w, eps, inv_metric) {
            Ok(()) => w.hamiltonian(inv_metric),
            Err(_) => f64::INFINITY,
        };
        let h = if h.is_nan() { f64::INFINITY } else { h };
        h0 - h
    };
    let direction = if delta_h(eps, rng) > threshold { 1 } else { -1 };
    loop {
        let dh = delta_h(eps, rng);
        if (direction == 1 && !(dh > threshold)) || (direction == -1 && !(dh < threshold)) {
            break;
        }
        eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 {
            return Err(Error::Sampler("step size diverged upward; the posterior may be improper".into()));
        }
        if eps == 0.0 {
            return Err(Error::Sampler("step size collapsed to zero; no acceptable step exists".into()));
        }
    }
    Ok(eps)
}
