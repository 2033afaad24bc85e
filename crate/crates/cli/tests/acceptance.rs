//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any fails. `ACCEPTANCE_ONLY=3,5` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use clone_commons_core::clones::{normalize, DuplicateIndex};
use clone_commons_core::diagnostics::{
    compare_models, elpd_difference, gpd_fit_tail, model_loo, ppc_stat, psis_loo, LooResult, PpcStatistic,
};
use clone_commons_core::ingest::{derive_events, parse_change_log, parse_metrics_csv, parse_org_charts, Attribution};
use clone_commons_core::model::zinb::sample_nb;
use clone_commons_core::model::{zinb_log_pmf, ModelKind, ModelSpec, Posterior};
use clone_commons_core::ocam::{ocam_metrics, ocam_rank, OcamMetric};
use clone_commons_core::predict::{replicate_outcomes, simulate_dataset, SimulationDesign, TrueParameters};
use clone_commons_core::sampler::{ess, run_chains, split_rhat, ChainConfig, LogDensity, SampleBatch};
use clone_commons_core::FileChangeEvent;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn full_config(seed: u64) -> ChainConfig {
    ChainConfig { chains: 4, warmup: 1000, samples: 1000, seed, ..ChainConfig::default() }
}

// ---------------------------------------------------------------- 1

fn zinb_correctness() -> Outcome {
    let mut worst: f64 = 1.0;
    for &mu in &[0.05, 0.5, 2.0, 10.0, 50.0] {
        for &phi in &[0.3, 1.0, 5.0, 100.0] {
            for &xi in &[0.0, 0.2, 0.7, 0.99] {
                let total: f64 = (0..=20_000u64).map(|y| zinb_log_pmf(y, mu, phi, xi).unwrap().exp()).sum();
                worst = worst.min(total);
                check((1.0 - 1e-6..=1.0 + 1e-9).contains(&total), || {
                    format!("pmf mass {total} at mu={mu} phi={phi} xi={xi}")
                })?;
            }
        }
    }

    // xi = 0.2, mu = 2, phi = 1: NB(1, 2) is geometric with p(y) = (1/3)(2/3)^y.
    let cases = [(0u64, 0.2 + 0.8 / 3.0), (1, 0.8 * 2.0 / 9.0), (3, 0.8 * 8.0 / 81.0)];
    for (y, p) in cases {
        let got = zinb_log_pmf(y, 2.0, 1.0, 0.2).unwrap();
        check((got - f64::ln(p)).abs() < 1e-12, || format!("y={y}: {got} vs {}", p.ln()))?;
    }
    check((zinb_log_pmf(0, 2.0, 1.0, 0.2).unwrap() - (7.0f64 / 15.0).ln()).abs() < 1e-12, || "log(7/15)".into())?;

    let (mu, phi, n) = (3.0, 2.0, 200_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ys: Vec<f64> = (0..n).map(|_| sample_nb(mu, phi, &mut rng) as f64).collect();
    let m = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let m4 = ys.iter().map(|y| (y - m).powi(4)).sum::<f64>() / n as f64;
    let target = mu + mu * mu / phi;
    let se_var = ((m4 - var * var) / n as f64).sqrt();
    check((var - target).abs() < 4.0 * se_var, || format!("variance {var} vs {target} (se {se_var})"))?;
    let se_mean = (target / n as f64).sqrt();
    check((m - mu).abs() < 4.0 * se_mean, || format!("mean {m} vs {mu}"))?;
    Ok(format!(
        "min truncated mass {:.9}, NB variance {var:.4} vs {target} ({:.1} se)",
        worst,
        (var - target).abs() / se_var
    ))
}

// ---------------------------------------------------------------- 2

fn toy_truth(kind: ModelKind) -> TrueParameters {
    match kind {
        ModelKind::M0 | ModelKind::M3 => TrueParameters::intercept_only(kind, -0.3, 0.8, 0.4, 1.5),
        k => TrueParameters::preset(k),
    }
}

fn gradient_check() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, kind) in [ModelKind::M0, ModelKind::M1, ModelKind::M2, ModelKind::M3].into_iter().enumerate() {
        let sim = simulate_dataset(&toy_truth(kind), SimulationDesign { teams: 4, repos: 3, n: 200 }, 100 + k as u64)
            .map_err(|e| e.to_string())?;
        let spec = ModelSpec::new(kind);
        let post = Posterior::new(&sim.dataset, &spec).map_err(|e| e.to_string())?;
        let dim = post.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(7 + k as u64);
        let mut g = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        for point in 0..100 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            post.log_density_gradient(&x, &mut g).map_err(|e| e.to_string())?;
            for i in 0..dim {
                let mut y = x.clone();
                y[i] = x[i] + h;
                let up = post.log_density_gradient(&y, &mut scratch).map_err(|e| e.to_string())?;
                y[i] = x[i] - h;
                let down = post.log_density_gradient(&y, &mut scratch).map_err(|e| e.to_string())?;
                let fd = (up - down) / (2.0 * h);
                let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0);
                worst = worst.max(rel);
                check(rel < 1e-5, || format!("{kind} point {point} coordinate {i}: analytic {} vs fd {fd}", g[i]))?;
            }
        }
    }
    Ok(format!("max relative error {worst:.2e} over 4 models x 100 points"))
}

// ---------------------------------------------------------------- 3

fn population(name: &str) -> bool {
    name.starts_with("b_") || name.starts_with("sd_") || name == "shape"
}

fn parameter_recovery() -> Outcome {
    // Truth inside the bulk of the Normal(0, 0.5) intercept prior.
    let truth = TrueParameters::intercept_only(ModelKind::M0, -0.5, 0.5, 0.3, 1.5);
    let reps = 20u64;
    let mut covered: BTreeMap<String, usize> = BTreeMap::new();
    let mut clean_runs = 0;
    let mut max_rhat: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for r in 0..reps {
        let sim = simulate_dataset(&truth, SimulationDesign { teams: 5, repos: 4, n: 5000 }, 1000 + r)
            .map_err(|e| e.to_string())?;
        let spec = ModelSpec::new(ModelKind::M0);
        let post = Posterior::new(&sim.dataset, &spec).map_err(|e| e.to_string())?;
        let t0 = Instant::now();
        let batch = run_chains(&post, &full_config(r + 1)).map_err(|e| e.to_string())?;
        slowest = slowest.max(t0.elapsed());
        let s = batch.summary();
        let rh = s.max_rhat.unwrap_or(f64::INFINITY);
        max_rhat = max_rhat.max(rh);
        check(rh < 1.01, || format!("replicate {r}: max R-hat {rh:.4}"))?;
        if s.divergences == 0 {
            clean_runs += 1;
        }
        for (name, &value) in sim.layout.constrained_names().iter().zip(&sim.truth_constrained) {
            if !population(name) {
                continue;
            }
            let p = s.parameters.iter().find(|p| &p.name == name).ok_or(format!("no summary for {name}"))?;
            *covered.entry(name.clone()).or_default() += (p.q5 <= value && value <= p.q95) as usize;
        }
    }
    check(clean_runs as f64 / reps as f64 > 0.99, || format!("{clean_runs}/{reps} runs without divergences"))?;
    check(slowest < Duration::from_secs(15 * 60), || format!("slowest fit took {slowest:?}"))?;
    let need = (0.8 * reps as f64).ceil() as usize;
    let short: Vec<String> =
        covered.iter().filter(|(_, &c)| c < need).map(|(n, c)| format!("{n} {c}/{reps}")).collect();
    check(short.is_empty(), || format!("coverage below {need}/{reps}: {}", short.join(", ")))?;
    let list: Vec<String> = covered.iter().map(|(n, c)| format!("{n} {c}/{reps}")).collect();
    Ok(format!("max R-hat {max_rhat:.4}, {clean_runs}/{reps} clean runs, 90% coverage: {}", list.join(", ")))
}

// ---------------------------------------------------------------- 4

fn fit_loo(sim_ds: &clone_commons_core::Dataset, kind: ModelKind, seed: u64) -> Result<(LooResult, SampleBatch), String> {
    let spec = ModelSpec::new(kind);
    let post = Posterior::new(sim_ds, &spec).map_err(|e| e.to_string())?;
    let batch = run_chains(&post, &full_config(seed)).map_err(|e| e.to_string())?;
    let loo = model_loo(&batch.unconstrained_draws(), sim_ds, &spec).map_err(|e| e.to_string())?;
    Ok((loo, batch))
}

fn loo_ordering() -> Outcome {
    let sim = simulate_dataset(&TrueParameters::preset(ModelKind::M2), SimulationDesign { teams: 5, repos: 4, n: 5000 }, 4)
        .map_err(|e| e.to_string())?;
    let mut fits = Vec::new();
    for (i, kind) in [ModelKind::M0, ModelKind::M1, ModelKind::M2].into_iter().enumerate() {
        let (loo, batch) = fit_loo(&sim.dataset, kind, 40 + i as u64)?;
        let s = batch.summary();
        eprintln!(
            "  {kind}: elpd_loo {:.1} (se {:.1}), max R-hat {:.3}, {} divergences, {} k>0.7",
            loo.elpd_loo,
            loo.se,
            s.max_rhat.unwrap_or(f64::NAN),
            s.divergences,
            loo.flagged.len()
        );
        fits.push(loo);
    }
    let (d10, s10) = elpd_difference(&fits[1], &fits[0]).map_err(|e| e.to_string())?;
    let (d21, s21) = elpd_difference(&fits[2], &fits[1]).map_err(|e| e.to_string())?;
    let rows = compare_models(&[("m0", &fits[0]), ("m1", &fits[1]), ("m2", &fits[2])]).map_err(|e| e.to_string())?;
    let order: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    let detail = format!("order {order:?}, m2-m1 {d21:.1} (se {s21:.1}), m1-m0 {d10:.1} (se {s10:.1})");
    check(order == ["m2", "m1", "m0"], || detail.clone())?;
    check(d21 > 2.0 * s21 && d10 > 2.0 * s10, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5

fn log_normal_pdf(y: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (y - m).powi(2) / v)
}

fn gpd_sample(k: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    if k == 0.0 {
        -sigma * (1.0 - u).ln()
    } else {
        sigma / k * ((1.0 - u).powf(-k) - 1.0)
    }
}

fn psis_vs_exact() -> Outcome {
    // y_i ~ N(theta, 1), theta ~ N(0, tau^2): posterior and leave-one-out
    // predictive densities are closed form.
    let (n, s, tau2) = (40usize, 4000usize, 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let y: Vec<f64> = (0..n).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
    let sum: f64 = y.iter().sum();
    let prec = 1.0 / tau2 + n as f64;
    let (pm, pv) = (sum / prec, 1.0 / prec);
    let ll: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            let theta = pm + pv.sqrt() * rng.sample::<f64, _>(StandardNormal);
            y.iter().map(|&yi| log_normal_pdf(yi, theta, 1.0)).collect()
        })
        .collect();
    let loo = psis_loo(&ll).map_err(|e| e.to_string())?;
    let exact: f64 = y
        .iter()
        .map(|&yi| {
            let p = 1.0 / tau2 + (n - 1) as f64;
            log_normal_pdf(yi, (sum - yi) / p, 1.0 + 1.0 / p)
        })
        .sum();
    let gap = (loo.elpd_loo - exact).abs();
    check(gap < loo.se, || format!("elpd_psis {} vs exact {exact} (se {})", loo.elpd_loo, loo.se))?;

    let mut medians = Vec::new();
    for (j, &k) in [0.0, 0.5].iter().enumerate() {
        let mut ks: Vec<f64> = (0..50)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(9000 + 100 * j as u64 + r);
                let mut x: Vec<f64> = (0..500).map(|_| gpd_sample(k, 1.0, &mut rng)).collect();
                x.sort_by(f64::total_cmp);
                gpd_fit_tail(&x).map(|f| f.k)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ks.sort_by(f64::total_cmp);
        let med = 0.5 * (ks[24] + ks[25]);
        check((med - k).abs() <= 0.1, || format!("median k-hat {med:.3} for k = {k}"))?;
        medians.push(med);
    }
    Ok(format!(
        "elpd_psis {:.3} vs exact {exact:.3} (se {:.2}); median k-hat {:.3} (k=0), {:.3} (k=0.5)",
        loo.elpd_loo, loo.se, medians[0], medians[1]
    ))
}

// ---------------------------------------------------------------- 6

fn ppc_zero_band() -> Outcome {
    let truth = TrueParameters::intercept_only(ModelKind::M0, -0.5, 1.6, 0.3, 1.5);
    let sim = simulate_dataset(&truth, SimulationDesign { teams: 5, repos: 4, n: 5000 }, 6).map_err(|e| e.to_string())?;
    let observed = sim.dataset.outcomes();
    let zeros = observed.iter().filter(|&&v| v == 0).count() as f64 / observed.len() as f64;
    check((0.9..=0.96).contains(&zeros), || format!("simulated zero share {zeros}"))?;
    let spec = ModelSpec::new(ModelKind::M0);
    let post = Posterior::new(&sim.dataset, &spec).map_err(|e| e.to_string())?;
    let batch = run_chains(&post, &full_config(66)).map_err(|e| e.to_string())?;
    let draws = batch.unconstrained_draws();
    let thinned: Vec<Vec<f64>> = (0..1000).map(|i| draws[i * draws.len() / 1000].clone()).collect();
    let pred = replicate_outcomes(&thinned, &sim.layout, &sim.dataset, 67).map_err(|e| e.to_string())?;
    let r = ppc_stat(&observed, &pred, PpcStatistic::PropZero).map_err(|e| e.to_string())?;
    let detail = format!("observed {:.4}, 95% band [{:.4}, {:.4}]", r.observed, r.lower, r.upper);
    check(r.lower <= r.observed && r.observed <= r.upper && (r.mass - 0.95).abs() < 1e-12, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

const TOY_LOG: &str = "repo,hash,author_id,author_date,committer_id,committer_date,file_path,added,removed
r,c01,alice,2020-01-01T10:00:00Z,alice,2020-01-01T10:00:00Z,a.java,50,0
r,c02,bob,2020-01-02T10:00:00Z,bob,2020-01-02T10:00:00Z,b.java,40,0
r,c03,alice,2020-01-03T10:00:00Z,alice,2020-01-03T10:00:00Z,a.java,20,5
r,c03,alice,2020-01-03T10:00:00Z,alice,2020-01-03T10:00:00Z,b.java,10,2
r,c04,bob,2020-01-04T10:00:00Z,bob,2020-01-04T10:00:00Z,c.java,30,0
r,c05,bob,2020-01-05T10:00:00Z,bob,2020-01-05T10:00:00Z,a.java,3,10
r,c06,alice,2020-01-06T10:00:00Z,alice,2020-01-06T10:00:00Z,c.java,15,1
r,c07,alice,2020-01-07T10:00:00Z,alice,2020-01-07T10:00:00Z,b.java,0,8
r,c08,bob,2020-01-08T10:00:00Z,bob,2020-01-08T10:00:00Z,a.java,12,0
r,c08,bob,2020-01-08T10:00:00Z,bob,2020-01-08T10:00:00Z,c.java,2,2
r,c09,alice,2020-01-09T10:00:00Z,bob,2020-01-09T12:00:00Z,b.java,5,5
r,c10,bob,2020-01-10T10:00:00Z,bob,2020-01-10T10:00:00Z,c.java,1,20
";

const TOY_CHARTS: &str = r#"[{"valid_from":"2019-06-01","teams":{"Red":["alice"],"Blue":["bob"]}}]"#;

/// Full (complexity, duplicated blocks) snapshot of every file after each commit.
const TOY_SNAPSHOTS: [(&str, &[(&str, u64, u64)]); 10] = [
    ("c01", &[("a.java", 5, 0)]),
    ("c02", &[("a.java", 5, 0), ("b.java", 3, 1)]),
    ("c03", &[("a.java", 7, 2), ("b.java", 4, 1)]),
    ("c04", &[("a.java", 7, 2), ("b.java", 4, 1), ("c.java", 2, 0)]),
    ("c05", &[("a.java", 6, 0), ("b.java", 4, 1), ("c.java", 2, 0)]),
    ("c06", &[("a.java", 6, 0), ("b.java", 4, 1), ("c.java", 3, 3)]),
    ("c07", &[("a.java", 6, 0), ("b.java", 4, 0), ("c.java", 3, 3)]),
    ("c08", &[("a.java", 8, 1), ("b.java", 4, 0), ("c.java", 3, 2)]),
    ("c09", &[("a.java", 8, 1), ("b.java", 5, 2), ("c.java", 3, 2)]),
    ("c10", &[("a.java", 8, 1), ("b.java", 5, 2), ("c.java", 1, 0)]),
];

fn toy_metrics_csv() -> String {
    let mut s = String::from("repo,hash,file_path,complexity,duplicated_blocks\n");
    for (hash, files) in TOY_SNAPSHOTS {
        for (f, c, d) in files {
            s.push_str(&format!("r,{hash},{f},{c},{d}\n"));
        }
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn ev(hash: &str, file: &str, ta: &str, tc: &str, add: u64, rem: u64, comp: u64, dup_prev: u64, i: u64, f: u64) -> FileChangeEvent {
    FileChangeEvent {
        repo: "r".into(),
        hash: hash.into(),
        file_path: file.into(),
        team_author: ta.into(),
        team_committer: tc.into(),
        add,
        rem,
        comp,
        dup_prev,
        introduced: i,
        fixed: f,
    }
}

fn toy_events() -> Result<Vec<FileChangeEvent>, String> {
    let log = parse_change_log(TOY_LOG).map_err(|e| e.to_string())?;
    let charts = parse_org_charts(TOY_CHARTS).map_err(|e| e.to_string())?;
    let metrics = parse_metrics_csv(toy_metrics_csv().as_bytes()).map_err(|e| e.to_string())?;
    derive_events(&log.commits, &metrics, &charts).map_err(|e| e.to_string())
}

fn ingest_oracle() -> Outcome {
    let t0 = Instant::now();
    let got = toy_events()?;
    let expected = vec![
        ev("c01", "a.java", "Red", "Red", 50, 0, 5, 0, 0, 0),
        ev("c02", "b.java", "Blue", "Blue", 40, 0, 3, 0, 1, 0),
        ev("c03", "a.java", "Red", "Red", 20, 5, 7, 0, 2, 0),
        ev("c03", "b.java", "Red", "Red", 10, 2, 4, 1, 0, 0),
        ev("c04", "c.java", "Blue", "Blue", 30, 0, 2, 0, 0, 0),
        ev("c05", "a.java", "Blue", "Blue", 3, 10, 6, 2, 0, 2),
        ev("c06", "c.java", "Red", "Red", 15, 1, 3, 0, 3, 0),
        ev("c07", "b.java", "Red", "Red", 0, 8, 4, 1, 0, 1),
        ev("c08", "a.java", "Blue", "Blue", 12, 0, 8, 0, 1, 0),
        ev("c08", "c.java", "Blue", "Blue", 2, 2, 3, 3, 0, 1),
        ev("c09", "b.java", "Red", "Blue", 5, 5, 5, 0, 2, 0),
        ev("c10", "c.java", "Blue", "Blue", 1, 20, 1, 2, 0, 2),
    ];
    for (i, (g, e)) in got.iter().zip(&expected).enumerate() {
        check(g == e, || format!("event {i}: got {g:?}, expected {e:?}"))?;
    }
    check(got.len() == expected.len(), || format!("{} events, expected {}", got.len(), expected.len()))?;
    // Telescoping: per file, introduced - fixed sums to the last snapshot's count.
    let last = TOY_SNAPSHOTS[9].1;
    for (f, _, dup) in last {
        let net: i64 = got.iter().filter(|e| e.file_path == *f).map(|e| e.introduced as i64 - e.fixed as i64).sum();
        check(net == *dup as i64, || format!("{f}: net {net} vs final {dup}"))?;
        for e in got.iter().filter(|e| e.file_path == *f) {
            check(e.introduced == 0 || e.fixed == 0, || format!("{} {f}: both introduced and fixed", e.hash))?;
        }
    }
    let el = t0.elapsed();
    check(el < Duration::from_secs(1), || format!("took {el:?}"))?;
    let intro: u64 = got.iter().map(|e| e.introduced).sum();
    let fixed: u64 = got.iter().map(|e| e.fixed).sum();
    Ok(format!("12 events exact, {intro} introduced / {fixed} fixed, telescoping holds"))
}

// ---------------------------------------------------------------- 8

/// Brute force: a window start is duplicated when any other (file, start)
/// pair has the same `w` lines.
fn oracle_blocks(files: &[Vec<String>], w: usize) -> Vec<u64> {
    files
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            if f.len() < w {
                return 0;
            }
            let marks: Vec<bool> = (0..=f.len() - w)
                .map(|s| {
                    files.iter().enumerate().any(|(gj, g)| {
                        g.len() >= w
                            && (0..=g.len() - w).any(|t| !(gj == fi && t == s) && g[t..t + w] == f[s..s + w])
                    })
                })
                .collect();
            let mut blocks = 0;
            for i in 0..marks.len() {
                if marks[i] && (i == 0 || !marks[i - 1]) {
                    blocks += 1;
                }
            }
            blocks
        })
        .collect()
}

/// Renders canonical lines with indentation, spacing and comments that the
/// detector must ignore.
fn decorate(lines: &[String], rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    for l in lines {
        match rng.random_range(0..6) {
            0 => s.push_str("\n   \n"),
            1 => s.push_str("/* noise\n   spanning lines */\n"),
            2 => s.push_str("    // a remark\n"),
            _ => {}
        }
        let indent = " ".repeat(rng.random_range(0..8));
        let spaced = l.replace(' ', &" ".repeat(rng.random_range(1..4)));
        s.push_str(&indent);
        s.push_str(&spaced);
        if rng.random_bool(0.3) {
            s.push_str("   // trailing");
        }
        s.push('\n');
    }
    s
}

fn detect(files: &[Vec<String>], rng: &mut ChaCha8Rng, w: usize) -> Vec<u64> {
    let normalized: Vec<_> =
        files.iter().enumerate().map(|(i, f)| normalize(&format!("f{i}.java"), &decorate(f, rng))).collect();
    let index = DuplicateIndex::build(normalized.clone(), w);
    normalized.iter().map(|f| index.count_duplicate_blocks(f)).collect()
}

fn clone_oracle() -> Outcome {
    let t0 = Instant::now();
    let w = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vocab: Vec<String> = (0..40).map(|i| format!("v{} = call(v{}, {});", i % 7, i % 5, i)).collect();
    let shared: Vec<Vec<String>> = (0..8)
        .map(|b| (0..rng.random_range(8..24)).map(|i| format!("s{b}_{i} = step({b}, {i});")).collect())
        .collect();
    let files: Vec<Vec<String>> = (0..30)
        .map(|f| {
            let mut lines = Vec::new();
            let mut u = 0;
            while lines.len() < 120 {
                match rng.random_range(0..10) {
                    0..=1 => {
                        let b = &shared[rng.random_range(0..shared.len())];
                        let start = rng.random_range(0..b.len() / 2);
                        let end = rng.random_range(start + 1..=b.len());
                        lines.extend_from_slice(&b[start..end]);
                    }
                    2 => lines.push(vocab[rng.random_range(0..vocab.len())].clone()),
                    _ => {
                        lines.push(format!("u{f}_{u} = local({u});"));
                        u += 1;
                    }
                }
            }
            lines
        })
        .collect();
    let expected = oracle_blocks(&files, w);
    let got = detect(&files, &mut rng, w);
    check(got == expected, || format!("detector {got:?}\n oracle {expected:?}"))?;
    let total: u64 = expected.iter().sum();
    check(total > 0, || "corpus has no duplicates".into())?;

    let unique = |tag: &str, n: usize| -> Vec<String> { (0..n).map(|i| format!("{tag}{i} = only({i});")).collect() };
    let common: Vec<String> = (0..15).map(|i| format!("shared{i} = both({i});")).collect();
    for (len, want) in [(15usize, 1u64), (5, 0)] {
        let a = [unique("a", 12), common[..len].to_vec(), unique("aa", 12)].concat();
        let b = [unique("b", 7), common[..len].to_vec(), unique("bb", 9)].concat();
        let got = detect(&[a, b], &mut rng, w);
        check(got == vec![want, want], || format!("{len} shared lines gave {got:?}"))?;
    }
    let el = t0.elapsed();
    check(el < Duration::from_secs(30), || format!("took {el:?}"))?;
    Ok(format!("30 files, {total} duplicated blocks match the all-pairs oracle; 15/5 shared lines -> 1/0"))
}

// ---------------------------------------------------------------- 9

fn diagnostics_sanity() -> Outcome {
    let normal = |mean: f64, n: usize, seed: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let same: Vec<Vec<f64>> = (0..4).map(|c| normal(0.0, 1000, 90 + c)).collect();
    let r_same = split_rhat(&same).map_err(|e| e.to_string())?.value;
    check(r_same < 1.01, || format!("same-distribution R-hat {r_same}"))?;
    let apart = vec![normal(0.0, 1000, 1), normal(3.0, 1000, 2)];
    let r_apart = split_rhat(&apart).map_err(|e| e.to_string())?.value;
    check(r_apart > 1.2, || format!("shifted R-hat {r_apart}"))?;

    let phi: f64 = 0.9;
    let (chains, n) = (4, 5000);
    let ar: Vec<Vec<f64>> = (0..chains)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + c as u64);
            let mut x: f64 = rng.sample(StandardNormal);
            (0..n)
                .map(|_| {
                    x = phi * x + (1.0 - phi * phi).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    x
                })
                .collect()
        })
        .collect();
    let e = ess(&ar).map_err(|e| e.to_string())?.value;
    let closed = (chains * n) as f64 * (1.0 - phi) / (1.0 + phi);
    let rel = (e - closed).abs() / closed;
    check(rel < 0.2, || format!("AR(1) ESS {e:.0} vs {closed:.0}"))?;
    Ok(format!("R-hat {r_same:.4} (same) / {r_apart:.3} (shifted); AR(1) ESS {e:.0} vs {closed:.0} ({:.1}% off)", rel * 100.0))
}

// ---------------------------------------------------------------- 10

fn ocam_toy() -> Outcome {
    let t0 = Instant::now();
    let mut events = toy_events()?;
    // A second repository where teams tie.
    let tie = |hash: &str, file: &str, team: &str, add: u64, rem: u64, comp: u64| FileChangeEvent {
        repo: "s".into(),
        ..ev(hash, file, team, team, add, rem, comp, 0, 0, 0)
    };
    events.push(tie("s1", "x.java", "Red", 10, 0, 4));
    events.push(tie("s2", "y.java", "Blue", 10, 2, 4));
    events.push(tie("s3", "x.java", "Green", 3, 7, 1));
    let table = ocam_rank(&ocam_metrics(&events, Attribution::Committer));
    use OcamMetric::*;
    // (repo, team, [n_commit, churn, add_comp, rem_comp], ranks)
    let expected: [(&str, &str, [u64; 4], [f64; 4]); 5] = [
        ("r", "Red", [4, 103, 9, 0], [2.0, 2.0, 1.0, 2.0]),
        ("r", "Blue", [6, 119, 8, 3], [1.0, 1.0, 2.0, 1.0]),
        ("s", "Red", [1, 10, 4, 0], [2.0, 1.5, 1.5, 2.5]),
        ("s", "Blue", [1, 10, 4, 0], [2.0, 1.5, 1.5, 2.5]),
        ("s", "Green", [1, 7, 0, 3], [2.0, 3.0, 3.0, 1.0]),
    ];
    for (repo, team, values, ranks) in expected {
        let row = table.get(repo, team).ok_or(format!("no row for {team}@{repo}"))?;
        for (j, m) in [NCommit, Churn, AddComp, RemComp].into_iter().enumerate() {
            check(row.value(m) == values[j], || format!("{team}@{repo} {}: {} vs {}", m.name(), row.value(m), values[j]))?;
            check(row.rank(m) == Some(ranks[j]), || {
                format!("{team}@{repo} {} rank {:?} vs {}", m.name(), row.rank(m), ranks[j])
            })?;
        }
    }
    check(table.rows.len() == 5, || format!("{} rows", table.rows.len()))?;
    let el = t0.elapsed();
    check(el < Duration::from_secs(1), || format!("took {el:?}"))?;
    Ok("metric values and ranks match, including two- and three-way ties".into())
}

// ---------------------------------------------------------------- 11

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const PIPELINE: &[&[&str]] = &[
    &["ingest", "--log", "log.csv", "--org-chart", "org.json", "--metrics", "metrics.csv", "--out", "events.csv"],
    &["metrics", "--root", "src", "--repo", "r", "--hash", "h", "--out", "scan.csv"],
    &["ocam", "--events", "events.csv", "--out", "ocam.csv"],
    &["simulate", "--model", "m1", "--n", "300", "--teams", "3", "--repos", "2", "--seed", "5", "--out-dir", "sim"],
    &["fit", "--model", "m0", "--dataset", "sim/dataset.json", "--chains", "2", "--warmup", "150", "--samples", "150", "--seed", "3", "--out-dir", "fits/m0"],
    &["fit", "--model", "m1", "--dataset", "sim/dataset.json", "--chains", "2", "--warmup", "150", "--samples", "150", "--seed", "3", "--out-dir", "fits/m1"],
    &["diagnose", "--fit", "fits/m0", "--draws", "200", "--prior", "--prior-draws", "50"],
    &["loo", "--models", "m0,m1", "--fit-root", "fits", "--out-dir", "loo"],
    &["predict", "--fit", "fits/m1", "--quantity", "prob", "--out-dir", "pred/prob"],
    &["predict", "--fit", "fits/m1", "--quantity", "predict", "--n-rep", "3", "--out-dir", "pred/predict"],
    &["predict", "--fit", "fits/m1", "--quantity", "cumulative", "--team", "NEW", "--out-dir", "pred/cum"],
    &["predict", "--fit", "fits/m1", "--quantity", "effects", "--vary", "add", "--points", "6", "--out-dir", "pred/eff"],
    &["report", "--figure", "rootogram", "--diagnostics", "fits/m0/diagnostics"],
    &["report", "--figure", "ppc", "--diagnostics", "fits/m0/diagnostics"],
    &["report", "--figure", "prior-quantiles", "--diagnostics", "fits/m0/diagnostics"],
    &["report", "--figure", "prob-at-least-one", "--fit", "fits/m1"],
    &["report", "--figure", "cumulative", "--fit", "fits/m1", "--teams", "AVERAGE,NEW", "--max-count", "6"],
    &["report", "--figure", "conditional-effects", "--fit", "fits/m1", "--points", "6"],
    &["report", "--figure", "ocam", "--input", "ocam.csv"],
    &["report", "--figure", "loo", "--input", "loo/comparison.csv"],
];

fn run_pipeline(dir: &Path, threads: &str) -> Result<(), String> {
    for args in PIPELINE {
        let o = Command::new(env!("CARGO_BIN_EXE_clone-commons"))
            .current_dir(dir)
            .env("CLONE_COMMONS_THREADS", threads)
            .args(*args)
            .output()
            .map_err(|e| e.to_string())?;
        check(o.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    fs::write(d.join("log.csv"), TOY_LOG).unwrap();
    fs::write(d.join("org.json"), TOY_CHARTS).unwrap();
    fs::write(d.join("metrics.csv"), toy_metrics_csv()).unwrap();
    fs::create_dir_all(d.join("src")).unwrap();
    let body: String = (0..12).map(|i| format!("    int x{i} = f({i});\n")).collect();
    fs::write(d.join("src/A.java"), format!("class A {{\n{body}{body}}}\n")).unwrap();
    fs::write(d.join("src/B.java"), format!("class B {{\n{body}  if (a && b) {{ g(); }}\n}}\n")).unwrap();

    run_pipeline(d, "1")?;
    let first = snapshot(d);
    run_pipeline(d, "1")?;
    let second = snapshot(d);
    run_pipeline(d, "3")?;
    let third = snapshot(d);
    for (label, other) in [("repeat", &second), ("3 threads", &third)] {
        check(first.keys().eq(other.keys()), || format!("{label}: artifact sets differ"))?;
        let differing: Vec<String> = first
            .iter()
            .filter(|(p, bytes)| other.get(*p) != Some(bytes))
            .map(|(p, _)| p.display().to_string())
            .collect();
        check(differing.is_empty(), || format!("{label}: {} differ", differing.join(", ")))?;
    }
    let artifacts = first.keys().filter(|p| !p.starts_with("src")).count();
    Ok(format!("{} subcommand runs, {artifacts} artifacts byte-identical on repeat and across thread counts", PIPELINE.len()))
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "ZINB correctness", zinb_correctness),
        (2, "gradient check", gradient_check),
        (3, "parameter recovery", parameter_recovery),
        (4, "LOO ordering", loo_ordering),
        (5, "PSIS vs exact", psis_vs_exact),
        (6, "PPC zero proportion", ppc_zero_band),
        (7, "event derivation oracle", ingest_oracle),
        (8, "clone detector oracle", clone_oracle),
        (9, "diagnostics sanity", diagnostics_sanity),
        (10, "OCAM toy", ocam_toy),
        (11, "determinism", determinism),
    ];
    // Criterion 3 bounds each fit separately; 11 has no stated budget.
    let budgets = [Some(60), Some(120), None, Some(45 * 60), Some(600), Some(15 * 60), Some(1), Some(30), Some(60), Some(1), None];
    let mut failed = 0;
    for (i, (n, name, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(n)) {
            continue;
        }
        let t0 = Instant::now();
        let mut result = f();
        let el = t0.elapsed();
        if let (Ok(_), Some(b)) = (&result, budgets[i]) {
            if el > Duration::from_secs(b) {
                result = Err(format!("runtime {el:.1?} over budget {b}s"));
            }
        }
        match result {
            Ok(detail) => println!("criterion {n}: PASS {name}: {detail} [{el:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL {name}: {why} [{el:.1?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
