use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use clone_commons_core::dataset::{Dataset, Predictor};
use clone_commons_core::predict::{
    conditional_effects, cumulative_curve, posterior_predict, prob_at_least_one, Interval, PredictorSetting,
    TeamSelector, DEFAULT_MASS,
};

use super::{load_fit, parse};
use crate::args::{merge_with_config, required, PredictArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Prob,
    Predict,
    Cumulative,
    Effects,
}

impl std::str::FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prob" => Ok(Quantity::Prob),
            "predict" => Ok(Quantity::Predict),
            "cumulative" => Ok(Quantity::Cumulative),
            "effects" => Ok(Quantity::Effects),
            o => Err(format!("{o:?} (expected prob, predict, cumulative or effects)")),
        }
    }
}

/// Prediction request file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Request {
    team: Option<String>,
    repo: Option<String>,
    add: Option<f64>,
    rem: Option<f64>,
    comp: Option<f64>,
    dup: Option<f64>,
    quantity: Option<String>,
}

pub(crate) fn parse_predictor(s: &str) -> CliResult<Predictor> {
    Ok(Predictor::from_raw_name(s)?)
}

/// Raw value whose standardized log sits at the training mean.
pub(crate) fn center(dataset: &Dataset, p: Predictor) -> f64 {
    (dataset.standardization.get(p).mean.exp() - 1.0).max(0.0)
}

pub(crate) fn setting(
    dataset: &Dataset,
    team: Option<&str>,
    repo: Option<&str>,
    raw: [Option<f64>; 4],
) -> CliResult<PredictorSetting> {
    let team = TeamSelector::parse(team.unwrap_or("AVERAGE"));
    let repo = match (&team, repo) {
        (_, Some(r)) => r.to_string(),
        (TeamSelector::Named(_), None) => return Err(CliError::validation("a named team needs --repo")),
        (_, None) => String::new(),
    };
    let v = |i: usize| raw[i].unwrap_or_else(|| center(dataset, Predictor::ALL[i]));
    Ok(PredictorSetting { add: v(0), rem: v(1), comp: v(2), dup: v(3), team, repo })
}

#[derive(Serialize)]
struct PredictSettings {
    fit: PathBuf,
    request: Option<PathBuf>,
    setting: PredictorSetting,
    quantity: Quantity,
    vary: String,
    points: usize,
    max_count: u64,
    n_rep: usize,
    mass: f64,
    seed: u64,
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct CountSummary {
    n: usize,
    mean: f64,
    prop_zero: f64,
    interval: Interval,
    above_max: usize,
}

#[derive(Serialize)]
struct PredictArtifact<'a, T: Serialize> {
    setting: &'a PredictorSetting,
    quantity: Quantity,
    result: T,
}

pub fn predict(args: &PredictArgs, config: Option<&Value>, out: &mut dyn Write) -> CliResult<()> {
    let a = merge_with_config(args, config)?;
    let fit_dir = required(&a.fit, "fit")?;
    let mut run = Run::new("predict", &Value::Null, None)?;
    let req: Request = match &a.request {
        Some(p) => serde_json::from_slice(&run.read(p)?).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?,
        None => Request::default(),
    };
    let fit = load_fit(&mut run, &fit_dir)?;
    let setting = setting(
        &fit.dataset,
        a.team.as_deref().or(req.team.as_deref()),
        a.repo.as_deref().or(req.repo.as_deref()),
        [a.add.or(req.add), a.rem.or(req.rem), a.comp.or(req.comp), a.dup.or(req.dup)],
    )?;
    let quantity: Quantity = parse(a.quantity.as_deref().or(req.quantity.as_deref()).unwrap_or("prob"), "quantity")?;
    let s = PredictSettings {
        fit: fit_dir,
        request: a.request.clone(),
        setting,
        quantity,
        vary: a.vary.clone().unwrap_or_else(|| "comp".into()),
        points: a.points.unwrap_or(25),
        max_count: a.max_count.unwrap_or(20),
        n_rep: a.n_rep.unwrap_or(1),
        mass: a.mass.unwrap_or(DEFAULT_MASS),
        seed: a.seed.unwrap_or(42),
        out_dir: a.out_dir.clone().unwrap_or_else(|| "predict".into()),
    };
    if !(s.mass > 0.0 && s.mass < 1.0) {
        return Err(CliError::validation("--mass must lie strictly between 0 and 1"));
    }
    let inputs = std::mem::take(&mut run.manifest.inputs);
    let mut run = Run::new("predict", &s, Some(s.seed))?;
    run.manifest.inputs = inputs;
    let draws = fit.draws();
    let (layout, ds) = (&fit.layout, &fit.dataset);
    let json = s.out_dir.join("prediction.json");
    let csv_path = s.out_dir.join("prediction.csv");
    let io = |e: std::io::Error| CliError::runtime(e.to_string());
    match quantity {
        Quantity::Prob => {
            let iv = prob_at_least_one(&s.setting, &draws, layout, ds, s.mass, s.seed)?;
            run.write_json(&json, &PredictArtifact { setting: &s.setting, quantity, result: iv })?;
            run.write_csv_with(&csv_path, |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["team", "repo", "median", "lower", "upper", "mass"])?;
                w.write_record([
                    s.setting.team.label().to_string(),
                    s.setting.repo.clone(),
                    iv.median.to_string(),
                    iv.lower.to_string(),
                    iv.upper.to_string(),
                    iv.mass.to_string(),
                ])?;
                w.flush()?;
                Ok(())
            })?;
            writeln!(
                out,
                "P(at least one) for {}: {:.4} [{:.4}, {:.4}]",
                s.setting.team.label(),
                iv.median,
                iv.lower,
                iv.upper
            )
            .map_err(io)?;
        }
        Quantity::Predict => {
            if s.n_rep == 0 {
                return Err(CliError::validation("--n-rep must be positive"));
            }
            let y = posterior_predict(&s.setting, &draws, layout, ds, s.n_rep, s.seed)?;
            let mut freq = vec![0usize; s.max_count as usize + 1];
            let mut above = 0;
            for &v in &y {
                if v <= s.max_count {
                    freq[v as usize] += 1;
                } else {
                    above += 1;
                }
            }
            let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let summary = CountSummary {
                n: y.len(),
                mean: yf.iter().sum::<f64>() / yf.len() as f64,
                prop_zero: freq[0] as f64 / y.len() as f64,
                interval: Interval::of(&yf, s.mass),
                above_max: above,
            };
            run.write_csv_with(&csv_path, |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["count", "frequency", "proportion"])?;
                for (c, f) in freq.iter().enumerate() {
                    w.write_record([c.to_string(), f.to_string(), (*f as f64 / y.len() as f64).to_string()])?;
                }
                w.flush()?;
                Ok(())
            })?;
            writeln!(out, "predictive mean {:.4}, P(0) {:.4}", summary.mean, summary.prop_zero).map_err(io)?;
            run.write_json(&json, &PredictArtifact { setting: &s.setting, quantity, result: summary })?;
        }
        Quantity::Cumulative => {
            let curve = cumulative_curve(&s.setting, &draws, layout, ds, s.max_count, s.mass, s.seed)?;
            run.write_csv_with(&csv_path, |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["count", "median", "lower", "upper", "mass"])?;
                for p in &curve {
                    w.write_record([
                        p.count.to_string(),
                        p.cdf.median.to_string(),
                        p.cdf.lower.to_string(),
                        p.cdf.upper.to_string(),
                        p.cdf.mass.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            writeln!(out, "P(y <= 0) = {:.4}", curve[0].cdf.median).map_err(io)?;
            run.write_json(&json, &PredictArtifact { setting: &s.setting, quantity, result: curve })?;
        }
        Quantity::Effects => {
            let vary = parse_predictor(&s.vary)?;
            let grid = conditional_effects(&s.setting, vary, s.points, &draws, layout, ds, s.mass, s.seed)?;
            run.write_csv_with(&csv_path, |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record([s.vary.as_str(), "median", "lower", "upper", "mass"])?;
                for p in &grid {
                    w.write_record([
                        p.x.to_string(),
                        p.expected.median.to_string(),
                        p.expected.lower.to_string(),
                        p.expected.upper.to_string(),
                        p.expected.mass.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            writeln!(out, "{} grid points over {} -> {}", grid.len(), s.vary, csv_path.display()).map_err(io)?;
            run.write_json(&json, &PredictArtifact { setting: &s.setting, quantity, result: grid })?;
        }
    }
    Ok(())
}
