use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use splitree::harness::{
    density_diagnostics, run_ehh, run_error_clt, run_limit_clt, ExperimentConfig, McJointProvider,
    StatisticSamples,
};
use splitree::numerics::stats::{Estimate, Moments};
use splitree::rng::{stream, tags};
use splitree::scalefn::renewal_shifted_scale;
use splitree::simulator::{
    estimate_e, lineage_oracle, sample_cpp, scatter_mutations, simulate_forward, spectrum_at_rate,
    CoalescentTree, ForwardConfig, SpectrumResult,
};
use splitree::spectrum::{
    check_hypotheses, compute_constants, covariance_k_markov, covariance_m, CovarianceMatrix,
    MOptions, SpectrumConstants,
};
use splitree::{GridSpec, LifetimeModel, ScaleFunctions};

use crate::config::{Config, SimMode, StatKind};
use crate::output::{Csv, Num, Output};
use crate::CliError;

/// What a command reports back for the manifest.
pub struct RunInfo {
    pub alpha: f64,
    pub psi_prime_alpha: f64,
}

fn scale_functions(cfg: &Config) -> Result<ScaleFunctions, CliError> {
    Ok(ScaleFunctions::new(cfg.params()?, cfg.grid())?)
}

fn info(sf: &ScaleFunctions) -> RunInfo {
    RunInfo {
        alpha: sf.alpha(),
        psi_prime_alpha: sf.psi_prime_alpha(),
    }
}

pub fn scale(cfg: &Config, out: &mut Output) -> Result<RunInfo, CliError> {
    let sf = scale_functions(cfg)?;
    let times = sf.grid().times();
    let rows: Vec<String> = times
        .par_iter()
        .map(|&t| {
            let pm = sf.population_moments(t);
            format!(
                "{},{},{},{},{}\n",
                Num(t),
                Num(sf.w().eval(t)),
                Num(sf.w_theta().eval(t)),
                Num(pm.survival_prob),
                Num(pm.expected_n)
            )
        })
        .collect();
    let mut csv = Csv::new("t,W,W_theta,survival_prob,expected_N");
    for r in &rows {
        csv.push_raw(r);
    }
    out.write("scale.csv", &csv.into_string())?;
    out.json(
        "summary.json",
        &json!({
            "command": "scale",
            "alpha": sf.alpha(),
            "psi_prime_alpha": sf.psi_prime_alpha(),
            "mu": sf.mu(),
            "clonal_limit": sf.clonal_limit().ok(),
            "closed_form": sf.w().is_closed_form(),
            "inversion_spread": sf.w().max_spread().max(sf.w_theta().max_spread()),
            "hypotheses": check_hypotheses(&sf),
        }),
    )?;
    Ok(info(&sf))
}

fn matrix_json(m: &CovarianceMatrix) -> Value {
    json!({ "k_list": m.k_list, "entries": m.entries, "mc_error": m.mc_error })
}

fn m_matrix(
    cfg: &Config,
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    k_list: &[usize],
) -> Result<CovarianceMatrix, CliError> {
    let k_max = k_list.iter().copied().max().unwrap_or(1);
    let provider = McJointProvider::new(sf, cfg.constants.joint_replicates, cfg.seed, k_max);
    let options = MOptions {
        nodes: cfg.constants.m_nodes,
        a_max: cfg.constants.a_max,
    };
    Ok(covariance_m(sf, consts, k_list, &provider, options)?)
}

fn is_markov(sf: &ScaleFunctions) -> bool {
    matches!(
        sf.params().lifetime,
        LifetimeModel::Exponential { .. } | LifetimeModel::Infinite
    )
}

pub fn constants(cfg: &Config, out: &mut Output) -> Result<RunInfo, CliError> {
    let sf = scale_functions(cfg)?;
    let consts = compute_constants(&sf, cfg.constants.k_max)?;
    let mut csv = Csv::new("k,c_k,tail_bound");
    for k in 1..=consts.k_max() {
        csv.row(&[&k, &Num(consts.c(k)), &Num(consts.tail_bound(k))]);
    }
    out.write("constants.csv", &csv.into_string())?;
    let mut summary = json!({
        "command": "constants",
        "theta": consts.theta(),
        "alpha": sf.alpha(),
        "psi_prime_alpha": sf.psi_prime_alpha(),
        "weighted_mass": consts.weighted_mass(),
        "remainder": consts.remainder(),
        "warning": consts.warning,
        "M": Value::Null,
        "K": Value::Null,
    });
    if cfg.constants.joint_replicates > 0 && consts.theta() > 0.0 {
        let k_list = &cfg.experiment.k_list;
        let m = m_matrix(cfg, &sf, &consts, k_list)?;
        if is_markov(&sf) {
            summary["K"] = matrix_json(&covariance_k_markov(&sf, &consts, &m)?);
        }
        summary["M"] = matrix_json(&m);
    }
    out.json("summary.json", &summary)?;
    Ok(info(&sf))
}

fn spectrum_rows(
    buf: &mut String,
    r: u64,
    time: f64,
    s: &SpectrumResult,
    k_max: usize,
    e_hat: Option<f64>,
) {
    let tail = |buf: &mut String| {
        if let Some(e) = e_hat {
            write!(buf, ",{}", Num(e)).unwrap();
        }
    };
    write!(
        buf,
        "{r},{},{},0,{},{},{}",
        Num(time),
        Num(s.theta()),
        s.clonal,
        s.n,
        s.clonal
    )
    .unwrap();
    tail(buf);
    buf.push('\n');
    for k in 1..=k_max {
        write!(
            buf,
            "{r},{},{},{k},{},{},{}",
            Num(time),
            Num(s.theta()),
            s.a(k),
            s.n,
            s.clonal
        )
        .unwrap();
        tail(buf);
        buf.push('\n');
    }
}

pub fn simulate(cfg: &Config, out: &mut Output) -> Result<RunInfo, CliError> {
    let sf = scale_functions(cfg)?;
    let sim = &cfg.simulate;
    let thetas = if sim.theta_evals.is_empty() {
        vec![cfg.model.theta]
    } else {
        sim.theta_evals.clone()
    };
    let theta_max = thetas.iter().copied().fold(0.0, f64::max);
    let mut times = sim.times.clone();
    times.sort_by(f64::total_cmp);
    let reps = sim.replicates as u64;
    let (header, chunks, extra) = match sim.mode {
        SimMode::Cpp => {
            let chunks: Vec<String> = (0..reps)
                .into_par_iter()
                .map(|r| -> Result<String, CliError> {
                    let mut buf = String::new();
                    for (i, &t) in times.iter().enumerate() {
                        let mut rng =
                            stream(cfg.seed, tags::CPP, r * times.len() as u64 + i as u64);
                        let tree = sample_cpp(sf.w(), t, &mut rng)?;
                        let muts = scatter_mutations(&tree, theta_max, &mut rng);
                        for &th in &thetas {
                            spectrum_rows(
                                &mut buf,
                                r,
                                t,
                                &spectrum_at_rate(&tree, &muts, th),
                                sim.k_max,
                                None,
                            );
                        }
                    }
                    Ok(buf)
                })
                .collect::<Result<_, _>>()?;
            ("replicate,time,theta_eval,k,count,N,Z0", chunks, json!({}))
        }
        SimMode::Forward => {
            let horizon = sim
                .horizon
                .unwrap_or(2.0 * times.last().copied().unwrap_or(1.0));
            let fc = ForwardConfig {
                horizon,
                checkpoints: times.clone(),
                theta_evals: thetas.clone(),
                population_cap: sim.population_cap.unwrap_or(usize::MAX),
                condition_on_survival_at: sim.condition_on_survival.then_some(horizon),
                max_attempts: 100_000,
            };
            let runs: Vec<(String, usize, bool)> = (0..reps)
                .into_par_iter()
                .map(|r| -> Result<_, CliError> {
                    let mut rng = stream(cfg.seed, tags::FORWARD, r);
                    let run = simulate_forward(sf.params(), &fc, &mut rng)?;
                    let e = estimate_e(&run, sf.alpha(), sf.psi_prime_alpha());
                    let mut buf = String::new();
                    for cp in &run.checkpoints {
                        for s in &cp.spectra {
                            spectrum_rows(&mut buf, r, cp.time, s, sim.k_max, Some(e));
                        }
                    }
                    Ok((buf, run.attempts, run.truncated))
                })
                .collect::<Result<_, _>>()?;
            let attempts: usize = runs.iter().map(|r| r.1).sum();
            let truncated = runs.iter().filter(|r| r.2).count();
            (
                "replicate,time,theta_eval,k,count,N,Z0,E_hat",
                runs.into_iter().map(|r| r.0).collect(),
                json!({ "horizon": horizon, "attempts": attempts, "truncated": truncated }),
            )
        }
    };
    let mut csv = Csv::new(header);
    for c in &chunks {
        csv.push_raw(c);
    }
    out.write("spectrum_ts.csv", &csv.into_string())?;
    out.json(
        "summary.json",
        &json!({
            "command": "simulate",
            "mode": sim.mode,
            "replicates": sim.replicates,
            "times": times,
            "theta_evals": thetas,
            "alpha": sf.alpha(),
            "psi_prime_alpha": sf.psi_prime_alpha(),
            "forward": extra,
        }),
    )?;
    Ok(info(&sf))
}

fn experiment(cfg: &Config, t: f64) -> ExperimentConfig {
    let e = &cfg.experiment;
    let mut x = ExperimentConfig::new(t, e.replicates, cfg.seed);
    x.horizon = cfg.horizon() * t / e.t;
    x.k_list = e.k_list.clone();
    x.theta_grid = e.theta_grid.clone();
    x.kde_points = e.kde_points;
    x.bandwidth = e.bandwidth;
    x
}

fn run_kind(
    cfg: &Config,
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    x: &ExperimentConfig,
) -> Result<StatisticSamples, CliError> {
    Ok(match cfg.experiment.kind {
        StatKind::Error => run_error_clt(sf, consts, x)?,
        StatKind::Limit => run_limit_clt(
            sf,
            consts,
            x,
            cfg.experiment.population_cap.unwrap_or(usize::MAX),
        )?,
    })
}

#[derive(Serialize)]
struct DiagnosticRow {
    t: f64,
    k: usize,
    var_emp: f64,
    var_theory: f64,
    ks: f64,
    l2: f64,
}

pub fn clt(cfg: &Config, out: &mut Output) -> Result<RunInfo, CliError> {
    let sf = scale_functions(cfg)?;
    let consts = compute_constants(&sf, cfg.constants.k_max)?;
    let report = check_hypotheses(&sf);
    let k_list = cfg.experiment.k_list.clone();
    let theory = if report.error_clt_applicable && cfg.constants.joint_replicates > 0 {
        let m = m_matrix(cfg, &sf, &consts, &k_list)?;
        match cfg.experiment.kind {
            StatKind::Error => Some(m),
            StatKind::Limit if is_markov(&sf) => Some(covariance_k_markov(&sf, &consts, &m)?),
            StatKind::Limit => None,
        }
    } else {
        None
    };
    let main = experiment(cfg, cfg.experiment.t);
    let samples = run_kind(cfg, &sf, &consts, &main)?;
    let label = samples.kind.label();

    let mut csv = Csv::new("replicate,k,statistic,kind");
    for (r, row) in samples.values.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            csv.row(&[&r, &k_list[i], &Num(*v), &label]);
        }
    }
    out.write("clt_samples.csv", &csv.into_string())?;

    let mut times = cfg.experiment.diagnostic_times.clone();
    if times.is_empty() {
        times.push(cfg.experiment.t);
    }
    let mut rows = Vec::new();
    for &t in &times {
        let extra;
        let s = if t == cfg.experiment.t {
            &samples
        } else {
            extra = run_kind(cfg, &sf, &consts, &experiment(cfg, t))?;
            &extra
        };
        for (i, &k) in k_list.iter().enumerate() {
            let xs = s.column(i);
            let var_emp = Moments::of(&xs).variance;
            let var_theory = theory.as_ref().map_or(f64::NAN, |m| m.get(i, i));
            let (ks, l2) = if var_theory > 0.0 && xs.len() >= 1000 {
                let d = density_diagnostics(&xs, var_theory, main.kde_points, main.bandwidth)?;
                (d.ks_distance, d.l2_distance)
            } else {
                (f64::NAN, f64::NAN)
            };
            rows.push(DiagnosticRow {
                t,
                k,
                var_emp,
                var_theory,
                ks,
                l2,
            });
        }
    }
    let mut csv = Csv::new("t,k,var_emp,var_theory,ks,l2");
    for r in &rows {
        csv.row(&[
            &Num(r.t),
            &r.k,
            &Num(r.var_emp),
            &Num(r.var_theory),
            &Num(r.ks),
            &Num(r.l2),
        ]);
    }
    out.write("diagnostics.csv", &csv.into_string())?;

    let means: Vec<Estimate> = (0..k_list.len())
        .map(|i| Estimate::mean_of(&samples.column(i)))
        .collect();
    out.json(
        "summary.json",
        &json!({
            "command": "clt",
            "kind": label,
            "exploratory": samples.exploratory,
            "t": main.t,
            "horizon": main.horizon,
            "replicates": main.replicates,
            "k_list": k_list,
            "alpha": sf.alpha(),
            "psi_prime_alpha": sf.psi_prime_alpha(),
            "c_k": k_list.iter().map(|&k| consts.c(k)).collect::<Vec<_>>(),
            "statistic_mean": means,
            "covariance_empirical": samples.covariance(),
            "covariance_theory": theory.as_ref().map(matrix_json),
            "e_hat": (!samples.e_hat.is_empty()).then(|| Estimate::mean_of(&samples.e_hat)),
            "truncated": samples.truncated,
            "hypotheses": report,
        }),
    )?;
    Ok(info(&sf))
}

pub fn ehh(cfg: &Config, out: &mut Output) -> Result<RunInfo, CliError> {
    let sf = scale_functions(cfg)?;
    let mut x = experiment(cfg, cfg.experiment.t);
    if x.theta_grid.is_empty() {
        let alpha = sf.alpha();
        x.theta_grid = std::iter::once(0.0)
            .chain((1..=16).map(|i| alpha + (2.0 - alpha) * i as f64 / 16.0))
            .collect();
    }
    let outcome = run_ehh(&sf, &x)?;
    if outcome.rows.iter().all(|r| r.theta == 0.0) {
        return Err(splitree::Error::Hypothesis(format!(
            "no point of the theta grid exceeds alpha = {}",
            sf.alpha()
        ))
        .into());
    }
    let mut csv = Csv::new("theta,ehh_exact_mean,ehh_exact_sd,ehh_approx,rel_error");
    for r in &outcome.rows {
        csv.row(&[
            &Num(r.theta),
            &Num(r.ehh_exact_mean),
            &Num(r.ehh_exact_sd),
            &Num(r.ehh_approx),
            &Num(r.rel_error),
        ]);
    }
    out.write("ehh.csv", &csv.into_string())?;
    out.json(
        "summary.json",
        &json!({
            "command": "ehh",
            "t": x.t,
            "replicates": x.replicates,
            "alpha": sf.alpha(),
            "skipped_theta": outcome.skipped,
        }),
    )?;
    Ok(info(&sf))
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> Check {
    Check {
        name,
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

/// Oracle checks for the configured model; returns the failing names.
pub fn validate(cfg: &Config, out: &mut Output) -> Result<RunInfo, CliError> {
    let params = cfg.params()?;
    let grid = cfg.grid();
    let sf = ScaleFunctions::new(params.clone(), grid)?;
    let alpha = sf.alpha();
    let b = params.b;
    let mut checks = Vec::new();

    let lt = params.lifetime.laplace_transform(alpha);
    checks.push(check(
        "laplace_identity_at_alpha",
        (lt - (1.0 - alpha / b)).abs(),
        1e-8,
    ));

    let horizon = grid.t_max.min(20.0);
    let probe: Vec<f64> = (0..=400).map(|i| horizon * i as f64 / 400.0).collect();
    if sf.w().is_closed_form() {
        let inverted = ScaleFunctions::inverted(params.clone(), grid)?;
        let worst = probe
            .iter()
            .map(|&t| {
                let w = rel(inverted.w().eval(t), sf.w().eval(t));
                w.max(rel(inverted.w_theta().eval(t), sf.w_theta().eval(t)))
            })
            .fold(0.0, f64::max);
        checks.push(check("scale_inversion_vs_closed_form", worst, 1e-6));
        let markov_psi = if let LifetimeModel::Exponential { .. } = params.lifetime {
            (sf.psi_prime_alpha() - alpha / b).abs()
        } else {
            (sf.psi_prime_alpha() - 1.0).abs()
        };
        checks.push(check("psi_prime_alpha_closed_form", markov_psi, 1e-10));
    } else {
        let renewal = renewal_shifted_scale(&params, alpha, GridSpec::with_t_max(horizon));
        let step = horizon / (renewal.len() - 1) as f64;
        let worst = renewal
            .iter()
            .enumerate()
            .map(|(i, &g)| rel(sf.w().shifted(i as f64 * step), g))
            .fold(0.0, f64::max);
        checks.push(check("scale_inversion_vs_renewal", worst, 1e-5));
    }

    let roundtrip = probe
        .iter()
        .skip(1)
        .map(|&t| match sf.inverse_w(sf.w().eval(t)) {
            Ok(Some(s)) => (s - t).abs(),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    checks.push(check("scale_inverse_roundtrip", roundtrip, 1e-8));

    if params.theta > 0.0 {
        let consts = compute_constants(&sf, cfg.constants.k_max.max(200))?;
        let gap = (consts.weighted_mass() + consts.remainder() - 1.0).abs();
        checks.push(check("spectrum_mass_identity", gap, 1e-6));
    }

    if params.lifetime
        == (LifetimeModel::Rice {
            shape: 1.0,
            scale: 1.0,
        })
        && b == 1.0
    {
        checks.push(Check {
            name: "rice_preset_alpha_range",
            value: alpha,
            tolerance: 0.55,
            pass: (0.45..=0.55).contains(&alpha),
        });
    }

    let mut mismatches = 0;
    let mut rng = stream(cfg.seed, 0x7a11, 0);
    for _ in 0..200 {
        use rand::Rng;
        let n = rng.random_range(1..=40);
        let depths: Vec<f64> = (1..n)
            .map(|_| 3.0 * rng.random_range(1..=6) as f64 / 6.0)
            .collect();
        let tree = CoalescentTree::new(3.0, &depths)?;
        let muts = scatter_mutations(&tree, 1.5, &mut rng);
        for th in [0.5, 1.5] {
            mismatches +=
                (spectrum_at_rate(&tree, &muts, th) != lineage_oracle(&tree, &muts, th)) as usize;
        }
    }
    checks.push(check(
        "spectrum_sweep_vs_lineage_oracle",
        mismatches as f64,
        0.0,
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    out.json(
        "summary.json",
        &json!({
            "command": "validate",
            "alpha": alpha,
            "psi_prime_alpha": sf.psi_prime_alpha(),
            "checks": checks,
            "passed": failed.is_empty(),
        }),
    )?;
    for c in &checks {
        println!(
            "{:<36} {:<4} value {:e} (tolerance {:e})",
            c.name,
            if c.pass { "ok" } else { "FAIL" },
            c.value,
            c.tolerance
        );
    }
    if !failed.is_empty() {
        return Err(CliError::Validation(failed.join(", ")));
    }
    Ok(info(&sf))
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}
