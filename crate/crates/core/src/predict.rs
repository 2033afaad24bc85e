//! Posterior and prior predictive summaries for arbitrary change settings,
//! partial-pooling simulation of unseen teams, and the synthetic-data
//! generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{log1p_standardize, Dataset, Observation, OutcomeKind, Predictor, StandardizationParams};
use crate::error::{Error, Result};
use crate::ingest::Attribution;
use crate::model::corr::n_free;
use crate::model::density::{block_values, linear_predictors};
use crate::model::layout::Block;
use crate::model::zinb::{sample_zinb, zinb_cdf};
use crate::model::{Factor, ModelKind, ModelSpec, ParameterLayout, Side};
use crate::stats::{central_interval, logistic};

/// Interval mass used for prediction bands unless overridden.
pub const DEFAULT_MASS: f64 = 0.89;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeamSelector {
    Named(String),
    /// Population level: all team and cell offsets are zero.
    Average,
    /// A fresh team whose offsets are drawn per posterior draw.
    New,
}

impl TeamSelector {
    /// `AVERAGE` and `NEW` select the synthetic teams; anything else names a team.
    pub fn parse(s: &str) -> Self {
        match s {
            "AVERAGE" => TeamSelector::Average,
            "NEW" => TeamSelector::New,
            name => TeamSelector::Named(name.to_string()),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            TeamSelector::Named(n) => n,
            TeamSelector::Average => "AVERAGE",
            TeamSelector::New => "NEW",
        }
    }
}

/// Raw change sizes plus the team and repository to predict for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSetting {
    pub add: f64,
    pub rem: f64,
    pub comp: f64,
    pub dup: f64,
    pub team: TeamSelector,
    pub repo: String,
}

impl PredictorSetting {
    pub fn raw(&self, p: Predictor) -> f64 {
        match p {
            Predictor::A => self.add,
            Predictor::R => self.rem,
            Predictor::C => self.comp,
            Predictor::D => self.dup,
        }
    }

    pub fn set_raw(&mut self, p: Predictor, v: f64) {
        match p {
            Predictor::A => self.add = v,
            Predictor::R => self.rem = v,
            Predictor::C => self.comp = v,
            Predictor::D => self.dup = v,
        }
    }

    fn design(&self, st: &StandardizationParams) -> Result<[f64; 5]> {
        let mut row = [1.0; 5];
        for (i, p) in Predictor::ALL.into_iter().enumerate() {
            let v = self.raw(p);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{} must be a non-negative count, got {v}", p.raw_name())));
            }
            row[i + 1] = st.get(p).standardize(v);
        }
        Ok(row)
    }
}

/// How each block's offsets are chosen for a setting.
#[derive(Debug, Clone, Copy)]
enum Source {
    Zero,
    Group(usize),
    Fresh,
}

struct Resolved {
    row: [f64; 5],
    team: Source,
    cell: Source,
}

fn resolve(setting: &PredictorSetting, dataset: &Dataset) -> Result<Resolved> {
    let row = setting.design(&dataset.standardization)?;
    let (team, cell) = match &setting.team {
        TeamSelector::Average => (Source::Zero, Source::Zero),
        TeamSelector::New => (Source::Fresh, Source::Fresh),
        TeamSelector::Named(name) => {
            let t = dataset
                .team_index(name)
                .ok_or_else(|| Error::invalid(format!("unknown team {name:?}; use AVERAGE or NEW for unseen teams")))?;
            let r = dataset
                .repo_index(&setting.repo)
                .ok_or_else(|| Error::invalid(format!("unknown repository {:?}", setting.repo)))?;
            let cell = dataset.teamrepo_index(t, r).map_or(Source::Fresh, Source::Group);
            (Source::Group(t), cell)
        }
    };
    Ok(Resolved { row, team, cell })
}

fn fresh_offsets<R: Rng + ?Sized>(sigma: &[f64], l: &[f64], rng: &mut R) -> Vec<f64> {
    let k = sigma.len();
    let u: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    (0..k)
        .map(|i| sigma[i] * (0..=i).map(|j| l[i * k + j] * u[j]).sum::<f64>())
        .collect()
}

/// Linear predictors and shape of one posterior draw at a setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawPredictor {
    pub eta_mu: f64,
    pub eta_zi: f64,
    pub phi: f64,
}

impl DrawPredictor {
    pub fn mu(&self) -> f64 {
        self.eta_mu.exp()
    }

    pub fn xi(&self) -> f64 {
        logistic(self.eta_zi)
    }

    /// `P(y >= 1) = (1 - xi)(1 - NB(0 | mu, phi))`.
    pub fn prob_at_least_one(&self) -> f64 {
        let log_nb0 = self.phi * (self.phi.ln() - (self.mu() + self.phi).ln());
        (1.0 - self.xi()) * -log_nb0.exp_m1()
    }

    pub fn expected(&self) -> f64 {
        (1.0 - self.xi()) * self.mu()
    }
}

fn block_contribution(x: &[f64], b: &Block, src: Source, row: &[f64; 5], rng: &mut ChaCha8Rng) -> f64 {
    let k = b.k();
    let off: Vec<f64> = match src {
        Source::Zero => return 0.0,
        Source::Group(g) => {
            let sigma: Vec<f64> = x[b.log_sigma..b.log_sigma + k].iter().map(|v| v.exp()).collect();
            let l = crate::model::corr::corr_cholesky(k, &x[b.corr..b.corr + n_free(k)]);
            let z = &x[b.z + g * k..b.z + (g + 1) * k];
            (0..k)
                .map(|i| sigma[i] * (0..=i).map(|j| l[i * k + j] * z[j]).sum::<f64>())
                .collect()
        }
        Source::Fresh => {
            let sigma: Vec<f64> = x[b.log_sigma..b.log_sigma + k].iter().map(|v| v.exp()).collect();
            let l = crate::model::corr::corr_cholesky(k, &x[b.corr..b.corr + n_free(k)]);
            fresh_offsets(&sigma, &l, rng)
        }
    };
    b.terms.iter().zip(off).map(|(t, o)| o * row[t.column()]).sum()
}

fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    rng
}

fn predictor_for_draw(x: &[f64], layout: &ParameterLayout, r: &Resolved, rng: &mut ChaCha8Rng) -> DrawPredictor {
    let mut eta = [0.0f64; 2];
    for (pi, t) in layout.population.iter().enumerate() {
        eta[0] += x[layout.pop_mu + pi] * r.row[t.column()];
        eta[1] += x[layout.pop_zi + pi] * r.row[t.column()];
    }
    for b in &layout.blocks {
        let src = match b.factor {
            Factor::Team => r.team,
            Factor::TeamRepo => r.cell,
        };
        eta[(b.side == Side::Zi) as usize] += block_contribution(x, b, src, &r.row, rng);
    }
    DrawPredictor { eta_mu: eta[0], eta_zi: eta[1], phi: x[layout.log_phi].exp() }
}

fn check_draws(draws: &[Vec<f64>], layout: &ParameterLayout) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    draws.iter().try_for_each(|x| layout.check(x))
}

/// Per-draw linear predictors at `setting`. Fresh offsets for `NEW` teams
/// and unobserved cells come from a stream per draw, so results do not
/// depend on thread scheduling.
pub fn setting_predictors(
    setting: &PredictorSetting,
    draws: &[Vec<f64>],
    layout: &ParameterLayout,
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<DrawPredictor>> {
    check_draws(draws, layout)?;
    let r = resolve(setting, dataset)?;
    Ok(draws
        .par_iter()
        .enumerate()
        .map(|(d, x)| predictor_for_draw(x, layout, &r, &mut draw_rng(seed, d)))
        .collect())
}

/// `n_rep` simulated counts per draw, draw-major.
pub fn posterior_predict(
    setting: &PredictorSetting,
    draws: &[Vec<f64>],
    layout: &ParameterLayout,
    dataset: &Dataset,
    n_rep: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    check_draws(draws, layout)?;
    let r = resolve(setting, dataset)?;
    let per_draw: Vec<Vec<u64>> = draws
        .par_iter()
        .enumerate()
        .map(|(d, x)| {
            let mut rng = draw_rng(seed, d);
            let p = predictor_for_draw(x, layout, &r, &mut rng);
            let (mu, xi) = (p.mu(), p.xi());
            (0..n_rep).map(|_| sample_zinb(mu, p.phi, xi, &mut rng)).collect()
        })
        .collect();
    Ok(per_draw.into_iter().flatten().collect())
}

/// Median and central interval of a per-draw quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

impl Interval {
    pub fn of(xs: &[f64], mass: f64) -> Self {
        let (median, lower, upper) = central_interval(xs, mass);
        Interval { median, lower, upper, mass }
    }
}

pub fn prob_at_least_one(
    setting: &PredictorSetting,
    draws: &[Vec<f64>],
    layout: &ParameterLayout,
    dataset: &Dataset,
    mass: f64,
    seed: u64,
) -> Result<Interval> {
    let p: Vec<f64> = setting_predictors(setting, draws, layout, dataset, seed)?
        .iter()
        .map(|d| d.prob_at_least_one())
        .collect();
    Ok(Interval::of(&p, mass))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub count: u64,
    pub cdf: Interval,
}

/// `P(y <= c)` for `c = 0..=max_count`, summarized over draws.
pub fn cumulative_curve(
    setting: &PredictorSetting,
    draws: &[Vec<f64>],
    layout: &ParameterLayout,
    dataset: &Dataset,
    max_count: u64,
    mass: f64,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let preds = setting_predictors(setting, draws, layout, dataset, seed)?;
    let cdfs: Vec<Vec<f64>> = preds
        .par_iter()
        .map(|p| zinb_cdf(max_count, p.mu(), p.phi, p.xi()))
        .collect();
    Ok((0..=max_count)
        .map(|c| {
            let col: Vec<f64> = cdfs.iter().map(|f| f[c as usize]).collect();
            CurvePoint { count: c, cdf: Interval::of(&col, mass) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectPoint {
    /// Raw value of the varied predictor.
    pub x: f64,
    pub expected: Interval,
}

/// Expected count `(1 - xi) mu` along a grid of `points` raw values of
/// `vary` from 0 to its training maximum, others held at `base`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_effects(
    base: &PredictorSetting,
    vary: Predictor,
    points: usize,
    draws: &[Vec<f64>],
    layout: &ParameterLayout,
    dataset: &Dataset,
    mass: f64,
    seed: u64,
) -> Result<Vec<EffectPoint>> {
    if points < 2 {
        return Err(Error::invalid("a conditional-effects grid needs at least 2 points"));
    }
    let hi = dataset.standardization.get(vary).raw_max;
    (0..points)
        .map(|i| {
            let x = hi * i as f64 / (points - 1) as f64;
            let mut s = base.clone();
            s.set_raw(vary, x);
            let e: Vec<f64> = setting_predictors(&s, draws, layout, dataset, seed)?
                .iter()
                .map(|p| p.expected())
                .collect();
            Ok(EffectPoint { x, expected: Interval::of(&e, mass) })
        })
        .collect()
}

/// Offsets of a synthetic team and its cells for one posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewTeamOffsets {
    pub mu_team: Vec<f64>,
    pub zi_team: Vec<f64>,
    pub mu_cells: Vec<Vec<f64>>,
    pub zi_cells: Vec<Vec<f64>>,
}

/// Draws offsets for an unseen team with `n_cells` repository cells from
/// each posterior draw's scales and correlations.
pub fn simulate_new_team(draws: &[Vec<f64>], layout: &ParameterLayout, n_cells: usize, seed: u64) -> Vec<NewTeamOffsets> {
    draws
        .par_iter()
        .enumerate()
        .map(|(d, x)| {
            let mut rng = draw_rng(seed, d);
            let one = |side, factor| {
                let v = block_values(x, layout.block(side, factor));
                (v.sigma, v.l)
            };
            let (s_mt, l_mt) = one(Side::Mu, Factor::Team);
            let (s_mc, l_mc) = one(Side::Mu, Factor::TeamRepo);
            let (s_zt, l_zt) = one(Side::Zi, Factor::Team);
            let (s_zc, l_zc) = one(Side::Zi, Factor::TeamRepo);
            NewTeamOffsets {
                mu_team: fresh_offsets(&s_mt, &l_mt, &mut rng),
                zi_team: fresh_offsets(&s_zt, &l_zt, &mut rng),
                mu_cells: (0..n_cells).map(|_| fresh_offsets(&s_mc, &l_mc, &mut rng)).collect(),
                zi_cells: (0..n_cells).map(|_| fresh_offsets(&s_zc, &l_zc, &mut rng)).collect(),
            }
        })
        .collect()
}

/// Replicated outcome vectors for every observation of `dataset`, one per draw.
pub fn replicate_outcomes(draws: &[Vec<f64>], layout: &ParameterLayout, dataset: &Dataset, seed: u64) -> Result<Vec<Vec<u64>>> {
    check_draws(draws, layout)?;
    let spec = layout.spec;
    let post = crate::model::Posterior::new(dataset, &spec)?;
    draws
        .par_iter()
        .enumerate()
        .map(|(d, x)| {
            let mut rng = draw_rng(seed, d);
            let phi = x[layout.log_phi].exp();
            Ok(post
                .all_linear_predictors(x)?
                .into_iter()
                .map(|(em, ez)| sample_zinb(em.exp(), phi, logistic(ez), &mut rng))
                .collect())
        })
        .collect()
}

/// Population-level truth for the simulator. Vectors follow the model's
/// population and varying term orders; correlations are the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub kind: ModelKind,
    pub b_mu: Vec<f64>,
    pub b_zi: Vec<f64>,
    pub sd_mu_team: Vec<f64>,
    pub sd_mu_cell: Vec<f64>,
    pub sd_zi_team: Vec<f64>,
    pub sd_zi_cell: Vec<f64>,
    pub shape: f64,
}

impl TrueParameters {
    pub fn intercept_only(kind: ModelKind, b0: f64, g0: f64, sd: f64, shape: f64) -> Self {
        TrueParameters {
            kind,
            b_mu: vec![b0],
            b_zi: vec![g0],
            sd_mu_team: vec![sd],
            sd_mu_cell: vec![sd],
            sd_zi_team: vec![sd],
            sd_zi_cell: vec![sd],
            shape,
        }
    }

    /// Default truths used by `simulate` and the benchmarks.
    pub fn preset(kind: ModelKind) -> Self {
        match kind {
            ModelKind::M0 | ModelKind::M3 => TrueParameters::intercept_only(kind, -0.5, 1.5, 0.3, 1.5),
            ModelKind::M1 => TrueParameters {
                kind,
                b_mu: vec![-0.3, 0.5, 0.3],
                b_zi: vec![0.5, -0.4, 0.2],
                sd_mu_team: vec![0.3, 0.2],
                sd_mu_cell: vec![0.2, 0.1],
                sd_zi_team: vec![0.3, 0.2],
                sd_zi_cell: vec![0.2, 0.1],
                shape: 1.5,
            },
            ModelKind::M2 => TrueParameters {
                kind,
                b_mu: vec![-0.3, 0.5, 0.3, 0.4, 0.4],
                b_zi: vec![0.5, -0.4, 0.2, -0.3, -0.3],
                sd_mu_team: vec![0.3, 0.2, 0.2, 0.2],
                sd_mu_cell: vec![0.2, 0.1, 0.1, 0.1],
                sd_zi_team: vec![0.3, 0.2, 0.2, 0.2],
                sd_zi_cell: vec![0.2, 0.1, 0.1, 0.1],
                shape: 1.5,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let spec = ModelSpec::new(self.kind);
        let (p, k) = (spec.population_terms().len(), spec.varying_terms().len());
        let sds = [&self.sd_mu_team, &self.sd_mu_cell, &self.sd_zi_team, &self.sd_zi_cell];
        if self.b_mu.len() != p || self.b_zi.len() != p || sds.iter().any(|s| s.len() != k) {
            return Err(Error::invalid(format!(
                "{} needs {p} population coefficients and {k} scales per block",
                self.kind
            )));
        }
        if !(self.shape > 0.0) || sds.iter().flat_map(|s| s.iter()).any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("scales and shape must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub teams: usize,
    pub repos: usize,
    /// Total observations, spread evenly over all team×repository cells.
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub layout: ParameterLayout,
    /// Unconstrained parameter vector the outcomes were drawn from.
    pub truth: Vec<f64>,
    pub truth_constrained: Vec<f64>,
}

/// Draws a dataset from the exact model: log-normal change sizes, standard
/// normal offsets, and ZINB outcomes.
pub fn simulate_dataset(truth: &TrueParameters, design: SimulationDesign, seed: u64) -> Result<SimulatedData> {
    truth.validate()?;
    if design.teams == 0 || design.repos == 0 || design.n == 0 {
        return Err(Error::invalid("simulation design must be nonempty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = |n: usize| n.to_string().len().max(2);
    let teams: Vec<String> = (1..=design.teams).map(|i| format!("team{:0w$}", i, w = width(design.teams))).collect();
    let repos: Vec<String> = (1..=design.repos).map(|i| format!("repo{:0w$}", i, w = width(design.repos))).collect();
    let teamrepos: Vec<(usize, usize)> =
        (0..design.teams).flat_map(|t| (0..design.repos).map(move |r| (t, r))).collect();

    let draw = |rng: &mut ChaCha8Rng, mu: f64, s: f64| -> Vec<f64> {
        let d = LogNormal::new(mu, s).expect("valid log-normal");
        (0..design.n).map(|_| d.sample(rng).floor()).collect()
    };
    let add = draw(&mut rng, 2.0, 1.5);
    let rem = draw(&mut rng, 1.5, 1.5);
    let comp = draw(&mut rng, 2.5, 1.2);
    let dup: Vec<f64> = {
        let d = LogNormal::<f64>::new(-0.5, 1.2).expect("valid log-normal");
        (0..design.n).map(|_| if rng.random::<f64>() < 0.6 { 0.0 } else { d.sample(&mut rng).floor() }).collect()
    };
    let (a, s_add) = log1p_standardize(&add)?;
    let (r, s_rem) = log1p_standardize(&rem)?;
    let (c, s_comp) = log1p_standardize(&comp)?;
    let (d, s_dup) = log1p_standardize(&dup)?;

    let outcome_kind = if truth.kind == ModelKind::M3 { OutcomeKind::Removed } else { OutcomeKind::Introduced };
    let mut observations: Vec<Observation> = (0..design.n)
        .map(|i| {
            let cell = i % teamrepos.len();
            let (team, repo) = teamrepos[cell];
            Observation { y: 0, a: a[i], r: r[i], c: c[i], d: d[i], team, repo, teamrepo: cell }
        })
        .collect();
    let mut dataset = Dataset {
        observations: Vec::new(),
        teams,
        repos,
        teamrepos,
        standardization: StandardizationParams { add: s_add, rem: s_rem, comp: s_comp, dup: s_dup },
        outcome_kind,
        attribution: Attribution::Committer,
    };

    let spec = ModelSpec::new(truth.kind);
    let layout = ParameterLayout::new(&spec, &dataset);
    let mut x = vec![0.0; layout.dim()];
    for (i, (bm, bz)) in truth.b_mu.iter().zip(&truth.b_zi).enumerate() {
        x[layout.pop_mu + i] = *bm;
        x[layout.pop_zi + i] = *bz;
    }
    for b in &layout.blocks {
        let sd = match (b.side, b.factor) {
            (Side::Mu, Factor::Team) => &truth.sd_mu_team,
            (Side::Mu, Factor::TeamRepo) => &truth.sd_mu_cell,
            (Side::Zi, Factor::Team) => &truth.sd_zi_team,
            (Side::Zi, Factor::TeamRepo) => &truth.sd_zi_cell,
        };
        for (i, s) in sd.iter().enumerate() {
            x[b.log_sigma + i] = s.ln();
        }
        for idx in b.z..b.z + b.n_groups() * b.k() {
            x[idx] = rng.sample(StandardNormal);
        }
    }
    x[layout.log_phi] = truth.shape.ln();

    for o in observations.iter_mut() {
        let (em, ez) = linear_predictors(o, &x, &layout)?;
        o.y = sample_zinb(em.exp(), truth.shape, logistic(ez), &mut rng);
    }
    dataset.observations = observations;
    let truth_constrained = layout.constrain(&x)?;
    Ok(SimulatedData { dataset, layout, truth: x, truth_constrained })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Term;

    fn sim(n: usize, seed: u64) -> SimulatedData {
        simulate_dataset(
            &TrueParameters::intercept_only(ModelKind::M0, 0.5, 1.0, 0.3, 2.0),
            SimulationDesign { teams: 3, repos: 2, n },
            seed,
        )
        .unwrap()
    }

    fn setting(team: TeamSelector, repo: &str) -> PredictorSetting {
        PredictorSetting { add: 10.0, rem: 3.0, comp: 20.0, dup: 1.0, team, repo: repo.into() }
    }

    /// A draw on `layout` with given intercepts, shape and zero offsets.
    fn flat_draw(layout: &ParameterLayout, b0: f64, g0: f64, phi: f64) -> Vec<f64> {
        let mut x = vec![0.0; layout.dim()];
        x[layout.pop_mu] = b0;
        x[layout.pop_zi] = g0;
        for b in &layout.blocks {
            for i in 0..b.k() {
                x[b.log_sigma + i] = (0.5f64).ln();
            }
        }
        x[layout.log_phi] = phi.ln();
        x
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = sim(500, 3);
        let b = sim(500, 3);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.dataset, sim(500, 4).dataset);
    }

    #[test]
    fn zero_proportion_follows_inflation() {
        // With a tiny mean nearly every non-inflated draw is also zero, so
        // compare against the exact expected proportion.
        let t = TrueParameters::intercept_only(ModelKind::M0, -1.0, 2.0, 0.01, 1.5);
        let s = simulate_dataset(&t, SimulationDesign { teams: 5, repos: 4, n: 50_000 }, 9).unwrap();
        let post = crate::model::Posterior::new(&s.dataset, &s.layout.spec).unwrap();
        let expected: f64 = post
            .all_linear_predictors(&s.truth)
            .unwrap()
            .iter()
            .map(|&(em, ez)| {
                let xi = logistic(ez);
                let mu = em.exp();
                xi + (1.0 - xi) * (1.5 / (mu + 1.5)).powf(1.5)
            })
            .sum::<f64>()
            / 50_000.0;
        let zeros = s.dataset.outcomes().iter().filter(|&&y| y == 0).count() as f64 / 50_000.0;
        assert!((zeros - expected).abs() < 0.01, "{zeros} vs {expected}");
    }

    #[test]
    fn inflated_draws_predict_zero() {
        let s = sim(200, 1);
        let x = flat_draw(&s.layout, 1.0, 40.0, 2.0);
        let y = posterior_predict(&setting(TeamSelector::Average, "repo01"), std::slice::from_ref(&x), &s.layout, &s.dataset, 100, 1).unwrap();
        assert!(y.iter().all(|&v| v == 0));
        let p = prob_at_least_one(&setting(TeamSelector::Average, "repo01"), &[x], &s.layout, &s.dataset, 0.89, 1).unwrap();
        assert!(p.median < 1e-15);
    }

    #[test]
    fn geometric_predictive_pmf() {
        let s = sim(200, 1);
        let x = flat_draw(&s.layout, 0.0, -50.0, 1.0);
        let y = posterior_predict(&setting(TeamSelector::Average, "repo01"), &[x], &s.layout, &s.dataset, 100_000, 2).unwrap();
        for k in 0..4u64 {
            let freq = y.iter().filter(|&&v| v == k).count() as f64 / 1e5;
            let want = 0.5f64.powi(k as i32 + 1);
            assert!((freq - want).abs() < 0.01 * want.max(0.1), "{k}: {freq}");
        }
    }

    #[test]
    fn prob_at_least_one_by_hand() {
        let s = sim(200, 1);
        let x = flat_draw(&s.layout, 2f64.ln(), -60.0, 1.0);
        let p = prob_at_least_one(&setting(TeamSelector::Average, "repo01"), &[x], &s.layout, &s.dataset, 0.89, 0).unwrap();
        assert!((p.median - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_at_zero_matches_prob_at_least_one() {
        let s = sim(300, 2);
        let draws: Vec<Vec<f64>> = (0..5).map(|i| crate::model::sample_prior(&s.layout, 100 + i)).collect();
        let st = setting(TeamSelector::Named("team02".into()), "repo01");
        let preds = setting_predictors(&st, &draws, &s.layout, &s.dataset, 7).unwrap();
        for p in &preds {
            let f0 = zinb_cdf(0, p.mu(), p.phi, p.xi())[0];
            assert!((f0 - (1.0 - p.prob_at_least_one())).abs() < 1e-12);
        }
        let curve = cumulative_curve(&st, &draws, &s.layout, &s.dataset, 3000, 0.89, 7).unwrap();
        assert!(curve.windows(2).all(|w| w[1].cdf.median >= w[0].cdf.median));
        assert!(curve.last().unwrap().cdf.lower >= 1.0 - 1e-6);
    }

    #[test]
    fn unknown_names_need_a_marker() {
        let s = sim(100, 1);
        let x = vec![flat_draw(&s.layout, 0.0, 0.0, 1.0)];
        assert!(setting_predictors(&setting(TeamSelector::Named("ghost".into()), "repo01"), &x, &s.layout, &s.dataset, 0).is_err());
        assert!(setting_predictors(&setting(TeamSelector::Named("team01".into()), "nowhere"), &x, &s.layout, &s.dataset, 0).is_err());
        assert!(setting_predictors(&setting(TeamSelector::New, "nowhere"), &x, &s.layout, &s.dataset, 0).is_ok());
    }

    #[test]
    fn average_equals_zero_offsets_and_training_rows_round_trip() {
        let s = sim(100, 5);
        let x = s.truth.clone();
        let avg = setting_predictors(&setting(TeamSelector::Average, "repo01"), std::slice::from_ref(&x), &s.layout, &s.dataset, 0).unwrap()[0];
        assert_eq!(avg.eta_mu, x[s.layout.pop_mu]);
        // A training row with raw sizes recovered from its standardized values.
        let o = s.dataset.observations[7];
        let st = &s.dataset.standardization;
        let row = PredictorSetting {
            add: st.add.destandardize(o.a),
            rem: st.rem.destandardize(o.r),
            comp: st.comp.destandardize(o.c),
            dup: st.dup.destandardize(o.d),
            team: TeamSelector::Named(s.dataset.teams[o.team].clone()),
            repo: s.dataset.repos[o.repo].clone(),
        };
        let p = setting_predictors(&row, std::slice::from_ref(&x), &s.layout, &s.dataset, 0).unwrap()[0];
        let (em, ez) = linear_predictors(&o, &x, &s.layout).unwrap();
        assert!((p.eta_mu - em).abs() < 1e-12 && (p.eta_zi - ez).abs() < 1e-12);
    }

    #[test]
    fn new_team_variance_matches_scale() {
        let s = sim(100, 5);
        let draws: Vec<Vec<f64>> = (0..2000).map(|i| crate::model::sample_prior(&s.layout, i)).collect();
        let sims = simulate_new_team(&draws, &s.layout, 2, 11);
        let b = s.layout.block(Side::Mu, Factor::Team);
        let mean_s2: f64 = draws.iter().map(|x| (2.0 * x[b.log_sigma]).exp()).sum::<f64>() / 2000.0;
        let var: f64 = sims.iter().map(|o| o.mu_team[0] * o.mu_team[0]).sum::<f64>() / 2000.0;
        assert!((var - mean_s2).abs() < 0.1 * mean_s2, "{var} vs {mean_s2}");
        // Collapsing the scales collapses the offsets.
        let tiny: Vec<Vec<f64>> = draws[..10]
            .iter()
            .map(|x| {
                let mut y = x.clone();
                for b in &s.layout.blocks {
                    y[b.log_sigma] = -30.0;
                }
                y
            })
            .collect();
        for o in simulate_new_team(&tiny, &s.layout, 1, 1) {
            assert!(o.mu_team[0].abs() < 1e-10 && o.zi_cells[0][0].abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_effects_follow_slopes() {
        let t = TrueParameters {
            kind: ModelKind::M2,
            b_mu: vec![0.0; 5],
            b_zi: vec![0.0; 5],
            sd_mu_team: vec![0.2; 4],
            sd_mu_cell: vec![0.2; 4],
            sd_zi_team: vec![0.2; 4],
            sd_zi_cell: vec![0.2; 4],
            shape: 1.0,
        };
        let s = simulate_dataset(&t, SimulationDesign { teams: 2, repos: 2, n: 400 }, 3).unwrap();
        let mut x = s.truth.clone();
        let base = setting(TeamSelector::Average, "repo01");
        let flat = conditional_effects(&base, Predictor::C, 5, &[x.clone()], &s.layout, &s.dataset, 0.89, 0).unwrap();
        assert!(flat.windows(2).all(|w| (w[0].expected.median - w[1].expected.median).abs() < 1e-12));
        assert_eq!(flat[0].x, 0.0);
        assert_eq!(flat[4].x, s.dataset.standardization.comp.raw_max);
        x[s.layout.population_index(Side::Mu, Term::Slope(Predictor::C)).unwrap()] = 0.4;
        let up = conditional_effects(&base, Predictor::C, 5, &[x], &s.layout, &s.dataset, 0.89, 0).unwrap();
        assert!(up.windows(2).all(|w| w[1].expected.median > w[0].expected.median));
    }
}
