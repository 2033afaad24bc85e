//! Design matrix construction: `log1p` transform, centering and scaling of
//! the four change predictors, and dense category indexing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Attribution, FileChangeEvent};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Introduced,
    Removed,
}

impl std::str::FromStr for OutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "introduced" => Ok(OutcomeKind::Introduced),
            "removed" => Ok(OutcomeKind::Removed),
            other => Err(Error::invalid(format!("unknown outcome {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predictor {
    A,
    R,
    C,
    D,
}

impl Predictor {
    pub const ALL: [Predictor; 4] = [Predictor::A, Predictor::R, Predictor::C, Predictor::D];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::A => "A",
            Predictor::R => "R",
            Predictor::C => "C",
            Predictor::D => "D",
        }
    }

    /// Name of the raw count this predictor is derived from.
    pub fn raw_name(self) -> &'static str {
        match self {
            Predictor::A => "add",
            Predictor::R => "rem",
            Predictor::C => "comp",
            Predictor::D => "dup",
        }
    }

    pub fn from_raw_name(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(Predictor::A),
            "rem" => Ok(Predictor::R),
            "comp" => Ok(Predictor::C),
            "dup" => Ok(Predictor::D),
            other => Err(Error::invalid(format!(
                "unknown predictor {other:?} (expected add, rem, comp or dup)"
            ))),
        }
    }
}

/// Training-time transform of one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorStats {
    /// Mean of `ln(1 + x)`.
    pub mean: f64,
    /// Sample standard deviation of `ln(1 + x)`.
    pub sd: f64,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl PredictorStats {
    pub fn standardize(&self, raw: f64) -> f64 {
        (raw.ln_1p() - self.mean) / self.sd
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        (z * self.sd + self.mean).exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub add: PredictorStats,
    pub rem: PredictorStats,
    pub comp: PredictorStats,
    pub dup: PredictorStats,
}

impl StandardizationParams {
    pub fn get(&self, p: Predictor) -> &PredictorStats {
        match p {
            Predictor::A => &self.add,
            Predictor::R => &self.rem,
            Predictor::C => &self.comp,
            Predictor::D => &self.dup,
        }
    }
}

/// Log-transforms, centers and scales `values`. The sd uses the `n - 1`
/// denominator.
pub fn log1p_standardize(values: &[f64]) -> Result<(Vec<f64>, PredictorStats)> {
    log1p_standardize_named(values, "predictor")
}

fn log1p_standardize_named(values: &[f64], name: &'static str) -> Result<(Vec<f64>, PredictorStats)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot standardize an empty predictor"));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln_1p()).collect();
    let mean = stats::mean(&logs);
    let sd = stats::sd(&logs);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegeneratePredictor(name));
    }
    let params = PredictorStats {
        mean,
        sd,
        raw_min: values.iter().copied().fold(f64::INFINITY, f64::min),
        raw_max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok((logs.iter().map(|l| (l - mean) / sd).collect(), params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: u64,
    pub a: f64,
    pub r: f64,
    pub c: f64,
    pub d: f64,
    pub team: usize,
    pub repo: usize,
    pub teamrepo: usize,
}

impl Observation {
    pub fn predictor(&self, p: Predictor) -> f64 {
        match p {
            Predictor::A => self.a,
            Predictor::R => self.r,
            Predictor::C => self.c,
            Predictor::D => self.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub teams: Vec<String>,
    pub repos: Vec<String>,
    /// `(team index, repo index)` per team×repo cell, sorted.
    pub teamrepos: Vec<(usize, usize)>,
    pub standardization: StandardizationParams,
    pub outcome_kind: OutcomeKind,
    pub attribution: Attribution,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_teams(&self) -> usize {
        self.teams.len()
    }

    pub fn n_teamrepos(&self) -> usize {
        self.teamrepos.len()
    }

    pub fn team_index(&self, name: &str) -> Option<usize> {
        self.teams.iter().position(|t| t == name)
    }

    pub fn repo_index(&self, name: &str) -> Option<usize> {
        self.repos.iter().position(|r| r == name)
    }

    pub fn teamrepo_index(&self, team: usize, repo: usize) -> Option<usize> {
        self.teamrepos.binary_search(&(team, repo)).ok()
    }

    pub fn outcomes(&self) -> Vec<u64> {
        self.observations.iter().map(|o| o.y).collect()
    }

    pub fn counts_per_team(&self) -> Vec<usize> {
        let mut c = vec![0; self.teams.len()];
        for o in &self.observations {
            c[o.team] += 1;
        }
        c
    }

    pub fn counts_per_teamrepo(&self) -> Vec<usize> {
        let mut c = vec![0; self.teamrepos.len()];
        for o in &self.observations {
            c[o.teamrepo] += 1;
        }
        c
    }

    /// Same categories and standardization, selected rows only.
    pub fn with_rows(&self, rows: impl IntoIterator<Item = usize>) -> Dataset {
        Dataset {
            observations: rows.into_iter().map(|i| self.observations[i]).collect(),
            ..self.clone_meta()
        }
    }

    /// Leave-one-out copy; categories keep their indices.
    pub fn without(&self, row: usize) -> Dataset {
        self.with_rows((0..self.len()).filter(|&i| i != row))
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            observations: Vec::new(),
            teams: self.teams.clone(),
            repos: self.repos.clone(),
            teamrepos: self.teamrepos.clone(),
            standardization: self.standardization,
            outcome_kind: self.outcome_kind,
            attribution: self.attribution,
        }
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            outcome_kind: self.outcome_kind,
            attribution: self.attribution,
            teams: self.teams.clone(),
            repos: self.repos.clone(),
            teamrepos: self.teamrepos.clone(),
            standardization: self.standardization,
            n_observations: self.len(),
        }
    }

    pub fn write_matrix_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["y", "A", "R", "C", "D", "team", "repo", "teamrepo"])?;
        for o in &self.observations {
            wtr.write_record([
                o.y.to_string(),
                o.a.to_string(),
                o.r.to_string(),
                o.c.to_string(),
                o.d.to_string(),
                o.team.to_string(),
                o.repo.to_string(),
                o.teamrepo.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load<R1: Read, R2: Read>(sidecar_json: R1, matrix_csv: R2) -> Result<Dataset> {
        let sc: DatasetSidecar = serde_json::from_reader(sidecar_json)?;
        let mut rdr = csv::Reader::from_reader(matrix_csv);
        let mut observations = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |what: &str| Error::Parse {
                line,
                message: format!("bad {what} in dataset matrix"),
            };
            if row.len() != 8 {
                return Err(bad("row width"));
            }
            let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad("number"));
            let u = |i: usize| row[i].parse::<usize>().map_err(|_| bad("index"));
            let obs = Observation {
                y: row[0].parse().map_err(|_| bad("outcome"))?,
                a: f(1)?,
                r: f(2)?,
                c: f(3)?,
                d: f(4)?,
                team: u(5)?,
                repo: u(6)?,
                teamrepo: u(7)?,
            };
            if obs.team >= sc.teams.len()
                || obs.repo >= sc.repos.len()
                || sc.teamrepos.get(obs.teamrepo) != Some(&(obs.team, obs.repo))
            {
                return Err(bad("category index"));
            }
            observations.push(obs);
        }
        if observations.len() != sc.n_observations {
            return Err(Error::invalid(format!(
                "dataset sidecar expects {} rows, matrix has {}",
                sc.n_observations,
                observations.len()
            )));
        }
        Ok(Dataset {
            observations,
            teams: sc.teams,
            repos: sc.repos,
            teamrepos: sc.teamrepos,
            standardization: sc.standardization,
            outcome_kind: sc.outcome_kind,
            attribution: sc.attribution,
        })
    }
}

/// JSON metadata written next to the dataset matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub outcome_kind: OutcomeKind,
    pub attribution: Attribution,
    pub teams: Vec<String>,
    pub repos: Vec<String>,
    pub teamrepos: Vec<(usize, usize)>,
    pub standardization: StandardizationParams,
    pub n_observations: usize,
}

/// Builds the dataset with committer attribution.
pub fn build_dataset(events: &[FileChangeEvent], outcome: OutcomeKind) -> Result<Dataset> {
    build_dataset_with(events, outcome, Attribution::Committer)
}

pub fn build_dataset_with(
    events: &[FileChangeEvent],
    outcome: OutcomeKind,
    attribution: Attribution,
) -> Result<Dataset> {
    if events.is_empty() {
        return Err(Error::invalid("no events to build a dataset from"));
    }
    let teams: Vec<String> = events
        .iter()
        .map(|e| e.team(attribution).to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let repos: Vec<String> = events
        .iter()
        .map(|e| e.repo.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let team_idx: BTreeMap<&str, usize> =
        teams.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let repo_idx: BTreeMap<&str, usize> =
        repos.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let cells: Vec<(usize, usize)> = events
        .iter()
        .map(|e| (team_idx[e.team(attribution)], repo_idx[e.repo.as_str()]))
        .collect();
    let teamrepos: Vec<(usize, usize)> = cells
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let raw = |f: fn(&FileChangeEvent) -> u64| -> Vec<f64> {
        events.iter().map(|e| f(e) as f64).collect()
    };
    let (a, add) = log1p_standardize_named(&raw(|e| e.add), "A")?;
    let (r, rem) = log1p_standardize_named(&raw(|e| e.rem), "R")?;
    let (c, comp) = log1p_standardize_named(&raw(|e| e.comp), "C")?;
    let (d, dup) = log1p_standardize_named(&raw(|e| e.dup_prev), "D")?;

    let observations = events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (team, repo) = cells[i];
            Observation {
                y: match outcome {
                    OutcomeKind::Introduced => e.introduced,
                    OutcomeKind::Removed => e.fixed,
                },
                a: a[i],
                r: r[i],
                c: c[i],
                d: d[i],
                team,
                repo,
                teamrepo: teamrepos.binary_search(&(team, repo)).expect("cell indexed"),
            }
        })
        .collect();
    Ok(Dataset {
        observations,
        teams,
        repos,
        teamrepos,
        standardization: StandardizationParams {
            add,
            rem,
            comp,
            dup,
        },
        outcome_kind: outcome,
        attribution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceClaim {
    pub claim: String,
    pub n: usize,
    pub estimate: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub claims: Vec<IndependenceClaim>,
    pub notices: Vec<String>,
    pub resamples: usize,
    pub seed: u64,
}

fn pooled_within_correlation(groups: &[Vec<(f64, f64)>]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for g in groups {
        let n = g.len() as f64;
        let mx = g.iter().map(|p| p.0).sum::<f64>() / n;
        let my = g.iter().map(|p| p.1).sum::<f64>() / n;
        for (x, y) in g {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
    }
    sxy / (sxx * syy).sqrt()
}

/// Checks the conditional independencies implied by the causal model:
/// removed lines against complexity and against existing duplicates, each
/// given the team. Correlations are pooled over team-centered values; the
/// 95% interval comes from a team-stratified bootstrap.
pub fn conditional_independence_report(
    dataset: &Dataset,
    resamples: usize,
    seed: u64,
) -> IndependenceReport {
    let mut notices = Vec::new();
    let counts = dataset.counts_per_team();
    let included: Vec<usize> = (0..dataset.n_teams()).filter(|&t| counts[t] >= 2).collect();
    for (t, &c) in counts.iter().enumerate() {
        if c < 2 {
            notices.push(format!(
                "team {} skipped: {} observation(s), need at least 2",
                dataset.teams[t], c
            ));
        }
    }
    let mut claims = Vec::new();
    let pairs: [(&str, Predictor); 2] = [("REM _||_ COMP | TEAM", Predictor::C), ("REM _||_ DUP | TEAM", Predictor::D)];
    for (k, (label, other)) in pairs.iter().enumerate() {
        let groups: Vec<Vec<(f64, f64)>> = included
            .iter()
            .map(|&t| {
                dataset
                    .observations
                    .iter()
                    .filter(|o| o.team == t)
                    .map(|o| (o.r, o.predictor(*other)))
                    .collect()
            })
            .collect();
        let n: usize = groups.iter().map(Vec::len).sum();
        let estimate = pooled_within_correlation(&groups);
        if groups.is_empty() || !estimate.is_finite() {
            notices.push(format!("claim {label} skipped: too few usable observations"));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut boot = Vec::with_capacity(resamples);
        let mut scratch: Vec<Vec<(f64, f64)>> = groups.iter().map(|g| Vec::with_capacity(g.len())).collect();
        for _ in 0..resamples {
            for (g, s) in groups.iter().zip(scratch.iter_mut()) {
                s.clear();
                for _ in 0..g.len() {
                    s.push(g[rng.random_range(0..g.len())]);
                }
            }
            let r = pooled_within_correlation(&scratch);
            if r.is_finite() {
                boot.push(r);
            }
        }
        let (_, lower, upper) = stats::central_interval(&boot, 0.95);
        claims.push(IndependenceClaim {
            claim: label.to_string(),
            n,
            estimate,
            mean: stats::mean(&boot),
            lower,
            upper,
        });
    }
    IndependenceReport {
        claims,
        notices,
        resamples,
        seed,
    }
}
