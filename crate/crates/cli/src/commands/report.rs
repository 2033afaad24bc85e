//! Figures: each one is a backing CSV table plus an SVG rendered from
//! that table alone, so `--from-csv` reproduces the same geometry.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use clone_commons_core::diagnostics::PpcStatistic;
use clone_commons_core::predict::{
    conditional_effects, cumulative_curve, prob_at_least_one, PredictorSetting, TeamSelector, DEFAULT_MASS,
};

use super::predict::{center, parse_predictor};
use super::{load_fit, parse, FitArtifacts};
use crate::args::{merge_with_config, ReportArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::svg::{render, Chart, Mark, Panel};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const BAND: &str = "#9ecae1";
const GREY: &str = "#555555";

/// Scenario from the large-change panel: ADD and REM at their 99th percentiles.
pub const SCENARIO_ADD: f64 = 370.0;
pub const SCENARIO_REM: f64 = 311.0;
pub const SCENARIO_COMP: f64 = 282.0;
pub const SCENARIO_DUP: f64 = 36.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    Rootogram,
    Ppc,
    PriorQuantiles,
    ProbAtLeastOne,
    Cumulative,
    ConditionalEffects,
    Ocam,
    Loo,
}

impl Figure {
    pub const ALL: [Figure; 8] = [
        Figure::Rootogram,
        Figure::Ppc,
        Figure::PriorQuantiles,
        Figure::ProbAtLeastOne,
        Figure::Cumulative,
        Figure::ConditionalEffects,
        Figure::Ocam,
        Figure::Loo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Rootogram => "rootogram",
            Figure::Ppc => "ppc",
            Figure::PriorQuantiles => "prior-quantiles",
            Figure::ProbAtLeastOne => "prob-at-least-one",
            Figure::Cumulative => "cumulative",
            Figure::ConditionalEffects => "conditional-effects",
            Figure::Ocam => "ocam",
            Figure::Loo => "loo",
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Figure::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Figure::ALL.iter().map(|f| f.name()).collect();
            format!("{s:?} (expected one of {})", names.join(", "))
        })
    }
}

/// A rectangular CSV table of strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::runtime(e.to_string());
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8], origin: &Path) -> CliResult<Self> {
        let bad = |e: csv::Error| CliError::validation(format!("{}: {e}", origin.display()));
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers().map_err(bad)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(String::from).collect()).map_err(bad))
            .collect::<CliResult<Vec<Vec<String>>>>()?;
        Ok(Table { header, rows })
    }

    fn index(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::validation(format!("table has no column {name:?}")))
    }

    fn strings(&self, name: &str) -> CliResult<Vec<String>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    fn numbers(&self, name: &str) -> CliResult<Vec<f64>> {
        let i = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r[i].parse::<f64>()
                    .map_err(|_| CliError::validation(format!("row {}: column {name} is not a number: {:?}", k + 1, r[i])))
            })
            .collect()
    }

    /// Values of `name` that are numbers; blanks and text become NaN.
    fn numbers_or_nan(&self, name: &str) -> CliResult<Vec<f64>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

/// Distinct values in first-seen order.
fn distinct(xs: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for x in xs {
        if !out.contains(x) {
            out.push(x.clone());
        }
    }
    out
}

fn read_table(run: &mut Run, path: &Path) -> CliResult<Table> {
    let bytes = run.read(path)?;
    Table::from_csv(&bytes, path)
}

fn read_json(run: &mut Run, path: &Path) -> CliResult<Value> {
    serde_json::from_slice(&run.read(path)?).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct ReportSettings {
    figure: Figure,
    from_csv: Option<PathBuf>,
    fit: Option<PathBuf>,
    diagnostics: Option<PathBuf>,
    input: Option<PathBuf>,
    teams: Option<Vec<String>>,
    repos: Option<Vec<String>>,
    add: Option<f64>,
    rem: Option<f64>,
    comp: Option<f64>,
    dup: Option<f64>,
    stat: PpcStatistic,
    vary: String,
    points: usize,
    max_count: u64,
    mass: f64,
    seed: u64,
    out_dir: PathBuf,
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, figure: Figure) -> CliResult<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| CliError::validation(format!("--figure {} needs --{flag}", figure.name())))
}

// ---- backing tables -------------------------------------------------------

fn rootogram_table(run: &mut Run, dir: &Path) -> CliResult<Table> {
    let src = read_table(run, &dir.join("rootogram.csv"))?;
    let count = src.strings("count")?;
    let so = src.numbers("sqrt_observed")?;
    let se = src.numbers("sqrt_expected")?;
    let sl = src.numbers("sqrt_lower")?;
    let su = src.numbers("sqrt_upper")?;
    let mut t = Table::new(&["count", "sqrt_observed", "sqrt_expected", "bar_bottom", "band_lower", "band_upper"]);
    for i in 0..count.len() {
        t.push(vec![
            count[i].clone(),
            num(so[i]),
            num(se[i]),
            num(se[i] - so[i]),
            num(se[i] - su[i]),
            num(se[i] - sl[i]),
        ]);
    }
    Ok(t)
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Vec::new();
    }
    if lo == hi {
        return vec![(lo - 0.5, hi + 0.5, values.len())];
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (lo + b as f64 * w, lo + (b + 1) as f64 * w, c)).collect()
}

fn observed_stat(json: &Value, stat: PpcStatistic, path: &Path) -> CliResult<f64> {
    json["statistics"]
        .as_array()
        .and_then(|a| a.iter().find(|s| s["statistic"] == stat.name()))
        .and_then(|s| s["observed"].as_f64())
        .ok_or_else(|| CliError::validation(format!("{} has no {} statistic", path.display(), stat.name())))
}

fn ppc_table(run: &mut Run, dir: &Path, stat: PpcStatistic) -> CliResult<Table> {
    let draws = read_table(run, &dir.join("ppc_draws.csv"))?.numbers(stat.name())?;
    let jp = dir.join("ppc.json");
    let observed = observed_stat(&read_json(run, &jp)?, stat, &jp)?;
    let mut t = Table::new(&["kind", "x0", "x1", "count"]);
    for (a, b, c) in histogram(&draws, 30) {
        t.push(vec!["draws".into(), num(a), num(b), c.to_string()]);
    }
    t.push(vec!["observed".into(), num(observed), num(observed), String::new()]);
    Ok(t)
}

fn prior_quantiles_table(run: &mut Run, dir: &Path) -> CliResult<Table> {
    let src = read_table(run, &dir.join("prior_ppc.csv"))?;
    let (q95, q99) = (src.numbers("q95")?, src.numbers("q99")?);
    let jp = dir.join("prior_ppc.json");
    let json = read_json(run, &jp)?;
    let mut t = Table::new(&["kind", "q95", "q99"]);
    for i in 0..q95.len() {
        t.push(vec!["prior".into(), num(q95[i]), num(q99[i])]);
    }
    t.push(vec![
        "observed".into(),
        num(observed_stat(&json, PpcStatistic::Q95, &jp)?),
        num(observed_stat(&json, PpcStatistic::Q99, &jp)?),
    ]);
    Ok(t)
}

/// (team, repo) settings for the prediction figures.
fn prediction_settings(fit: &FitArtifacts, s: &ReportSettings) -> CliResult<Vec<PredictorSetting>> {
    let ds = &fit.dataset;
    let teams: Vec<String> = match &s.teams {
        Some(t) => t.iter().map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
        None => ds.teams.iter().cloned().chain(["AVERAGE".to_string()]).collect(),
    };
    if teams.is_empty() {
        return Err(CliError::validation("--teams selects no teams; nothing to plot"));
    }
    if let Some(r) = &s.repos {
        if r.iter().all(|x| x.trim().is_empty()) {
            return Err(CliError::validation("--repos selects no repositories; nothing to plot"));
        }
    }
    let raw = |v: Option<f64>, p| v.unwrap_or_else(|| center(ds, p));
    use clone_commons_core::dataset::Predictor::*;
    let base = |team: TeamSelector, repo: String| PredictorSetting {
        add: raw(s.add, A),
        rem: raw(s.rem, R),
        comp: raw(s.comp, C),
        dup: raw(s.dup, D),
        team,
        repo,
    };
    let mut out = Vec::new();
    for name in &teams {
        let team = TeamSelector::parse(name);
        match &team {
            TeamSelector::Named(n) => {
                let t = ds
                    .team_index(n)
                    .ok_or_else(|| CliError::validation(format!("unknown team {n:?}; use AVERAGE or NEW")))?;
                let repos: Vec<String> = match &s.repos {
                    Some(r) => r.iter().map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
                    None => ds.teamrepos.iter().filter(|c| c.0 == t).map(|c| ds.repos[c.1].clone()).collect(),
                };
                for r in repos {
                    out.push(base(team.clone(), r));
                }
            }
            _ => out.push(base(team, String::new())),
        }
    }
    Ok(out)
}

fn repo_label(s: &PredictorSetting) -> String {
    if s.repo.is_empty() {
        "all".into()
    } else {
        s.repo.clone()
    }
}

fn prob_table(fit: &FitArtifacts, s: &ReportSettings) -> CliResult<Table> {
    let draws = fit.draws();
    let mut t = Table::new(&["team", "repo", "median", "lower", "upper", "mass"]);
    for st in prediction_settings(fit, s)? {
        let iv = prob_at_least_one(&st, &draws, &fit.layout, &fit.dataset, s.mass, s.seed)?;
        t.push(vec![st.team.label().into(), repo_label(&st), num(iv.median), num(iv.lower), num(iv.upper), num(iv.mass)]);
    }
    Ok(t)
}

fn cumulative_table(fit: &FitArtifacts, s: &ReportSettings) -> CliResult<Table> {
    let draws = fit.draws();
    let mut t = Table::new(&["team", "repo", "count", "median", "lower", "upper"]);
    for st in prediction_settings(fit, s)? {
        for p in cumulative_curve(&st, &draws, &fit.layout, &fit.dataset, s.max_count, s.mass, s.seed)? {
            t.push(vec![
                st.team.label().into(),
                repo_label(&st),
                p.count.to_string(),
                num(p.cdf.median),
                num(p.cdf.lower),
                num(p.cdf.upper),
            ]);
        }
    }
    Ok(t)
}

fn effects_table(fit: &FitArtifacts, s: &ReportSettings) -> CliResult<Table> {
    let draws = fit.draws();
    let vary = parse_predictor(&s.vary)?;
    let mut t = Table::new(&["team", "repo", "x", "median", "lower", "upper"]);
    for st in prediction_settings(fit, s)? {
        for p in conditional_effects(&st, vary, s.points, &draws, &fit.layout, &fit.dataset, s.mass, s.seed)? {
            t.push(vec![
                st.team.label().into(),
                repo_label(&st),
                num(p.x),
                num(p.expected.median),
                num(p.expected.lower),
                num(p.expected.upper),
            ]);
        }
    }
    Ok(t)
}

fn ocam_table(run: &mut Run, input: &Path) -> CliResult<Table> {
    let src = read_table(run, input)?;
    for c in ["repo", "team", "metric", "value", "rank"] {
        src.index(c)?;
    }
    Ok(src)
}

fn loo_table(run: &mut Run, input: &Path) -> CliResult<Table> {
    let src = read_table(run, input)?;
    let model = src.strings("model")?;
    let diff = src.numbers("elpd_diff")?;
    let se = src.numbers("se_diff")?;
    let mut t = Table::new(&["model", "elpd_diff", "se_diff", "lower", "upper"]);
    for i in 0..model.len() {
        t.push(vec![model[i].clone(), num(diff[i]), num(se[i]), num(diff[i] - 2.0 * se[i]), num(diff[i] + 2.0 * se[i])]);
    }
    Ok(t)
}

// ---- rendering ------------------------------------------------------------

fn facets(t: &Table, key: &str) -> CliResult<Vec<(String, Vec<usize>)>> {
    let col = t.strings(key)?;
    Ok(distinct(&col)
        .into_iter()
        .map(|k| {
            let rows = (0..col.len()).filter(|&i| col[i] == k).collect();
            (k, rows)
        })
        .collect())
}

fn columns_for(n: usize) -> usize {
    n.clamp(1, 3)
}

/// Builds the chart for `figure` from its backing table.
pub fn chart(figure: Figure, t: &Table) -> CliResult<Chart> {
    if t.rows.is_empty() {
        return Err(CliError::validation(format!("no rows to plot for {}", figure.name())));
    }
    let panels = match figure {
        Figure::Rootogram => {
            let c = t.numbers("count")?;
            let se = t.numbers("sqrt_expected")?;
            let bottom = t.numbers("bar_bottom")?;
            let (bl, bu) = (t.numbers("band_lower")?, t.numbers("band_upper")?);
            let mut marks = vec![Mark::Band { x: c.clone(), lower: bl, upper: bu, color: BAND }];
            for i in 0..c.len() {
                marks.push(Mark::Rect { x0: c[i] - 0.4, x1: c[i] + 0.4, y0: bottom[i], y1: se[i], color: "#bdbdbd" });
            }
            marks.push(Mark::Line { points: c.iter().cloned().zip(se).collect(), color: PALETTE[1] });
            marks.push(Mark::HLine { y: 0.0, color: GREY });
            vec![Panel {
                title: "suspended rootogram".into(),
                x_label: "count".into(),
                y_label: "sqrt(frequency)".into(),
                marks,
                ..Panel::default()
            }]
        }
        Figure::Ppc => {
            let kind = t.strings("kind")?;
            let (x0, x1) = (t.numbers("x0")?, t.numbers("x1")?);
            let count = t.numbers_or_nan("count")?;
            let mut marks = Vec::new();
            for i in 0..kind.len() {
                match kind[i].as_str() {
                    "draws" => marks.push(Mark::Rect { x0: x0[i], x1: x1[i], y0: 0.0, y1: count[i], color: BAND }),
                    "observed" => marks.push(Mark::VLine { x: x0[i], color: PALETTE[1] }),
                    o => return Err(CliError::validation(format!("unknown row kind {o:?}"))),
                }
            }
            vec![Panel {
                title: "posterior predictive statistic".into(),
                x_label: "statistic".into(),
                y_label: "draws".into(),
                marks,
                ..Panel::default()
            }]
        }
        Figure::PriorQuantiles => {
            let kind = t.strings("kind")?;
            let (a, b) = (t.numbers("q95")?, t.numbers("q99")?);
            let pts = |k: &str| -> Vec<(f64, f64)> {
                (0..kind.len()).filter(|&i| kind[i] == k).map(|i| (a[i], b[i])).collect()
            };
            vec![Panel {
                title: "prior predictive quantiles".into(),
                x_label: "q95".into(),
                y_label: "q99".into(),
                marks: vec![
                    Mark::Points { points: pts("prior"), color: PALETTE[0] },
                    Mark::Points { points: pts("observed"), color: PALETTE[1] },
                ],
                ..Panel::default()
            }]
        }
        Figure::ProbAtLeastOne => {
            let repo = t.strings("repo")?;
            let (m, lo, hi) = (t.numbers("median")?, t.numbers("lower")?, t.numbers("upper")?);
            facets(t, "team")?
                .into_iter()
                .map(|(team, rows)| {
                    let cats: Vec<String> = rows.iter().map(|&i| repo[i].clone()).collect();
                    let marks = rows
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| Mark::Interval { x: k as f64, lower: lo[i], mid: m[i], upper: hi[i], color: PALETTE[0] })
                        .collect();
                    Panel {
                        title: team,
                        x_label: "repository".into(),
                        y_label: "P(at least one clone)".into(),
                        marks,
                        x_range: Some((-0.5, cats.len() as f64 - 0.5)),
                        x_categories: Some(cats),
                        y_range: Some((0.0, 1.0)),
                    }
                })
                .collect()
        }
        Figure::Cumulative | Figure::ConditionalEffects => {
            let (xcol, xl, yl, yr) = if figure == Figure::Cumulative {
                ("count", "count", "P(y <= count)", Some((0.0, 1.0)))
            } else {
                ("x", "predictor value", "expected clones", None)
            };
            let repo = t.strings("repo")?;
            let x = t.numbers(xcol)?;
            let (m, lo, hi) = (t.numbers("median")?, t.numbers("lower")?, t.numbers("upper")?);
            facets(t, "team")?
                .into_iter()
                .map(|(team, rows)| {
                    let repos = distinct(&rows.iter().map(|&i| repo[i].clone()).collect::<Vec<_>>());
                    let mut marks = Vec::new();
                    for (k, r) in repos.iter().enumerate() {
                        let idx: Vec<usize> = rows.iter().cloned().filter(|&i| &repo[i] == r).collect();
                        let color = PALETTE[k % PALETTE.len()];
                        marks.push(Mark::Band {
                            x: idx.iter().map(|&i| x[i]).collect(),
                            lower: idx.iter().map(|&i| lo[i]).collect(),
                            upper: idx.iter().map(|&i| hi[i]).collect(),
                            color: BAND,
                        });
                        marks.push(Mark::Line { points: idx.iter().map(|&i| (x[i], m[i])).collect(), color });
                    }
                    Panel {
                        title: format!("{team} ({})", repos.join(", ")),
                        x_label: xl.into(),
                        y_label: yl.into(),
                        marks,
                        y_range: yr,
                        ..Panel::default()
                    }
                })
                .collect()
        }
        Figure::Ocam => {
            let (repo, team) = (t.strings("repo")?, t.strings("team")?);
            let value = t.numbers("value")?;
            facets(t, "metric")?
                .into_iter()
                .map(|(metric, rows)| {
                    let cats: Vec<String> = rows.iter().map(|&i| format!("{}@{}", team[i], repo[i])).collect();
                    let marks = rows
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| Mark::Rect {
                            x0: k as f64 - 0.4,
                            x1: k as f64 + 0.4,
                            y0: 0.0,
                            y1: value[i],
                            color: PALETTE[0],
                        })
                        .collect();
                    Panel {
                        title: metric,
                        x_label: "team@repository".into(),
                        y_label: "value".into(),
                        marks,
                        x_range: Some((-0.5, cats.len() as f64 - 0.5)),
                        x_categories: Some(cats),
                        y_range: None,
                    }
                })
                .collect()
        }
        Figure::Loo => {
            let model = t.strings("model")?;
            let (d, lo, hi) = (t.numbers("elpd_diff")?, t.numbers("lower")?, t.numbers("upper")?);
            let mut marks: Vec<Mark> = (0..model.len())
                .map(|i| Mark::Interval { x: i as f64, lower: lo[i], mid: d[i], upper: hi[i], color: PALETTE[0] })
                .collect();
            marks.push(Mark::HLine { y: 0.0, color: GREY });
            vec![Panel {
                title: "elpd difference to the best model (2 SE)".into(),
                x_label: "model".into(),
                y_label: "elpd_diff".into(),
                marks,
                x_range: Some((-0.5, model.len() as f64 - 0.5)),
                x_categories: Some(model),
                y_range: None,
            }]
        }
    };
    Ok(Chart { title: figure.name().into(), columns: columns_for(panels.len()), panels })
}

fn figure_from_path(p: &Path) -> Option<Figure> {
    p.file_stem()?.to_str()?.parse().ok()
}

pub fn report(args: &ReportArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let figure: Figure = match (&a.figure, &a.from_csv) {
        (Some(f), _) => parse(f, "figure")?,
        (None, Some(p)) => figure_from_path(p)
            .ok_or_else(|| CliError::validation(format!("cannot tell the figure from {}; pass --figure", p.display())))?,
        (None, None) => return Err(CliError::validation("missing required option --figure")),
    };
    let scenario = figure == Figure::ProbAtLeastOne;
    let s = ReportSettings {
        figure,
        from_csv: a.from_csv.clone(),
        fit: a.fit.clone(),
        diagnostics: a.diagnostics.clone(),
        input: a.input.clone(),
        teams: a.teams.clone(),
        repos: a.repos.clone(),
        add: a.add.or(scenario.then_some(SCENARIO_ADD)),
        rem: a.rem.or(scenario.then_some(SCENARIO_REM)),
        comp: a.comp.or(scenario.then_some(SCENARIO_COMP)),
        dup: a.dup.or(scenario.then_some(SCENARIO_DUP)),
        stat: parse(a.stat.as_deref().unwrap_or("prop_zero"), "statistic")?,
        vary: a.vary.clone().unwrap_or_else(|| "comp".into()),
        points: a.points.unwrap_or(25),
        max_count: a.max_count.unwrap_or(20),
        mass: a.mass.unwrap_or(DEFAULT_MASS),
        seed: a.seed.unwrap_or(42),
        out_dir: a.out_dir.clone().unwrap_or_else(|| "report".into()),
    };
    if !(s.mass > 0.0 && s.mass < 1.0) {
        return Err(CliError::validation("--mass must lie strictly between 0 and 1"));
    }
    let mut run = Run::new("report", &s, Some(s.seed))?;
    let table = match &s.from_csv {
        Some(p) => read_table(&mut run, p)?,
        None => match figure {
            Figure::Rootogram => rootogram_table(&mut run, need(&s.diagnostics, "diagnostics", figure)?)?,
            Figure::Ppc => ppc_table(&mut run, need(&s.diagnostics, "diagnostics", figure)?, s.stat)?,
            Figure::PriorQuantiles => prior_quantiles_table(&mut run, need(&s.diagnostics, "diagnostics", figure)?)?,
            Figure::Ocam => ocam_table(&mut run, need(&s.input, "input", figure)?)?,
            Figure::Loo => loo_table(&mut run, need(&s.input, "input", figure)?)?,
            Figure::ProbAtLeastOne | Figure::Cumulative | Figure::ConditionalEffects => {
                let fit = load_fit(&mut run, need(&s.fit, "fit", figure)?)?;
                match figure {
                    Figure::ProbAtLeastOne => prob_table(&fit, &s)?,
                    Figure::Cumulative => cumulative_table(&fit, &s)?,
                    _ => effects_table(&fit, &s)?,
                }
            }
        },
    };
    let csv_bytes = table.to_csv()?;
    // Render from the parsed bytes so both paths share one code path.
    let parsed = Table::from_csv(&csv_bytes, Path::new("<backing table>"))?;
    let c = chart(figure, &parsed)?;
    let csv_path = s.out_dir.join(format!("{}.csv", figure.name()));
    let svg_path = s.out_dir.join(format!("{}.svg", figure.name()));
    if s.from_csv.as_deref() != Some(csv_path.as_path()) {
        run.write_with_sidecar(&csv_path, &csv_bytes)?;
    }
    let svg = render(&c, &run.manifest_json()?);
    run.write_raw(&svg_path, svg.as_bytes())?;
    writeln!(out, "{} ({} rows) -> {}", figure.name(), parsed.rows.len(), svg_path.display())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}
