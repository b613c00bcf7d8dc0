//! Replicated Monte Carlo experiments: CLT statistics, joint moments of the
//! spectrum, density diagnostics and the EHH study.
//!
//! Every replicate draws from its own stream (see [`crate::rng`]); results
//! are collected in replicate order, so they do not depend on the number of
//! worker threads.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::quadrature::trapezoid;
use crate::numerics::stats::{gaussian_kde, ks_statistic, silverman_bandwidth, Estimate, Moments};
use crate::rng::{stream, tags};
use crate::scalefn::{ModelParams, ScaleFunctions};
use crate::simulator::{
    ehh_exact, estimate_e, sample_cpp, scatter_mutations, simulate_forward, spectrum_at_rate,
    ForwardConfig, SpectrumResult,
};
use crate::spectrum::{
    check_hypotheses, ehh_approx_with, laplace_cdf, laplace_density, AgeMoments,
    JointMomentProvider, SpectrumConstants,
};

/// Runs `f` on a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Scale of one replicated experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    /// Observation time.
    pub t: f64,
    /// Horizon `T` used for the limit estimate `E`.
    pub horizon: f64,
    pub k_list: Vec<usize>,
    pub replicates: usize,
    pub master_seed: u64,
    pub theta_grid: Vec<f64>,
    pub kde_points: usize,
    /// KDE bandwidth; Silverman's rule when `None`.
    pub bandwidth: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(t: f64, replicates: usize, master_seed: u64) -> Self {
        Self {
            t,
            horizon: 2.0 * t,
            k_list: vec![1],
            replicates,
            master_seed,
            theta_grid: Vec::new(),
            kde_points: 512,
            bandwidth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::invalid(format!(
                "at least 100 replicates are required (got {})",
                self.replicates
            )));
        }
        if !(self.t > 0.0) {
            return Err(Error::invalid("observation time must be positive"));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::invalid("k_list must contain positive integers"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticKind {
    /// `psi'(alpha) (A(k,t) - c_k N_t) / e^{alpha t/2}`.
    Error,
    /// `(psi'(alpha) A(k,t) - c_k e^{alpha t} E) / e^{alpha t/2}`.
    Limit,
}

impl StatisticKind {
    pub fn label(self) -> &'static str {
        match self {
            StatisticKind::Error => "error",
            StatisticKind::Limit => "limit",
        }
    }
}

/// Per-replicate CLT statistics.
#[derive(Debug, Clone, Serialize)]
pub struct StatisticSamples {
    pub kind: StatisticKind,
    pub t: f64,
    pub k_list: Vec<usize>,
    /// `values[r][i]`: replicate `r`, index `k_list[i]`.
    pub values: Vec<Vec<f64>>,
    pub n: Vec<u64>,
    /// Finite-horizon limit estimates (limit statistic only).
    pub e_hat: Vec<f64>,
    /// The run violates the hypotheses of the limit theorem.
    pub exploratory: bool,
    pub truncated: usize,
}

impl StatisticSamples {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i]).collect()
    }

    /// Empirical covariance with large-sample standard errors.
    pub fn covariance(&self) -> Vec<Vec<Estimate>> {
        let n = self.k_list.len();
        let r = self.values.len() as f64;
        let cols: Vec<Vec<f64>> = (0..n).map(|i| self.column(i)).collect();
        let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / r).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let prods: Vec<f64> = cols[i]
                            .iter()
                            .zip(&cols[j])
                            .map(|(x, y)| (x - means[i]) * (y - means[j]))
                            .collect();
                        let est = Estimate::mean_of(&prods);
                        Estimate {
                            value: est.value * r / (r - 1.0),
                            se: est.se,
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Spectrum counts of one coalescent point process at several rates.
pub fn cpp_spectra(
    sf: &ScaleFunctions,
    t: f64,
    theta_evals: &[f64],
    tag: u64,
    seed: u64,
    index: u64,
) -> Result<Vec<SpectrumResult>> {
    let mut rng = stream(seed, tag, index);
    let tree = sample_cpp(sf.w(), t, &mut rng)?;
    let theta_max = theta_evals.iter().copied().fold(0.0, f64::max);
    let muts = scatter_mutations(&tree, theta_max, &mut rng);
    Ok(theta_evals
        .iter()
        .map(|&th| spectrum_at_rate(&tree, &muts, th))
        .collect())
}

/// Error statistic `psi'(alpha) (A(k,t) - c_k N_t) / e^{alpha t/2}`, from coalescent
/// point processes at time `t` (populations conditioned to be alive at `t`).
pub fn run_error_clt(
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    config: &ExperimentConfig,
) -> Result<StatisticSamples> {
    config.validate()?;
    let theta = consts.theta();
    let report = check_hypotheses(sf);
    let scale = sf.psi_prime_alpha() * (-0.5 * sf.alpha() * config.t).exp();
    let c: Vec<f64> = config.k_list.iter().map(|&k| consts.c(k)).collect();
    let rows: Vec<(Vec<f64>, u64)> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, u64)> {
            let s =
                cpp_spectra(sf, config.t, &[theta], tags::CPP, config.master_seed, r)?.remove(0);
            let n = s.n as f64;
            let v = config
                .k_list
                .iter()
                .zip(&c)
                .map(|(&k, &ck)| scale * (s.a(k) as f64 - ck * n))
                .collect();
            Ok((v, s.n))
        })
        .collect::<Result<_>>()?;
    let (values, n) = rows.into_iter().unzip();
    Ok(StatisticSamples {
        kind: StatisticKind::Error,
        t: config.t,
        k_list: config.k_list.clone(),
        values,
        n,
        e_hat: Vec::new(),
        exploratory: !report.error_clt_applicable,
        truncated: 0,
    })
}

/// Statistic centred on the almost-sure limit `E`, from forward runs
/// conditioned to be alive at the horizon, with `E` estimated at the horizon.
pub fn run_limit_clt(
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    config: &ExperimentConfig,
    population_cap: usize,
) -> Result<StatisticSamples> {
    config.validate()?;
    if config.horizon <= config.t {
        return Err(Error::invalid(format!(
            "the horizon T = {} must exceed t = {}",
            config.horizon, config.t
        )));
    }
    let theta = consts.theta();
    let alpha = sf.alpha();
    let psi_prime = sf.psi_prime_alpha();
    let report = check_hypotheses(sf);
    let forward = ForwardConfig {
        horizon: config.horizon,
        checkpoints: vec![config.t],
        theta_evals: vec![theta],
        population_cap,
        condition_on_survival_at: Some(config.horizon),
        max_attempts: 100_000,
    };
    let c: Vec<f64> = config.k_list.iter().map(|&k| consts.c(k)).collect();
    let growth = (alpha * config.t).exp();
    let norm = (-0.5 * alpha * config.t).exp();
    let rows: Vec<(Vec<f64>, u64, f64, bool)> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let mut rng = stream(config.master_seed, tags::FORWARD, r);
            let run = simulate_forward(sf.params(), &forward, &mut rng)?;
            let e = estimate_e(&run, alpha, psi_prime);
            let s = &run.checkpoints[0].spectra[0];
            let v = config
                .k_list
                .iter()
                .zip(&c)
                .map(|(&k, &ck)| norm * (psi_prime * s.a(k) as f64 - ck * growth * e))
                .collect();
            Ok((v, s.n, e, run.truncated))
        })
        .collect::<Result<_>>()?;
    let truncated = rows.iter().filter(|r| r.3).count();
    let mut values = Vec::with_capacity(rows.len());
    let mut n = Vec::with_capacity(rows.len());
    let mut e_hat = Vec::with_capacity(rows.len());
    for (v, nn, e, _) in rows {
        values.push(v);
        n.push(nn);
        e_hat.push(e);
    }
    Ok(StatisticSamples {
        kind: StatisticKind::Limit,
        t: config.t,
        k_list: config.k_list.clone(),
        values,
        n,
        e_hat,
        exploratory: !report.error_clt_applicable,
        truncated,
    })
}

/// Monte Carlo joint moments of the spectrum and the clonal family, from
/// coalescent point processes at each requested age; one set of replicates
/// per age is simulated once and reused for every `(k, l)`.
pub struct McJointProvider<'a> {
    sf: &'a ScaleFunctions,
    theta: f64,
    replicates: usize,
    seed: u64,
    /// Per age: `(A(k) for k in k_max range, N, Z_0)` per replicate.
    cache: Mutex<HashMap<u64, std::sync::Arc<Vec<Replicate>>>>,
    k_max: usize,
}

#[derive(Debug, Clone)]
struct Replicate {
    a: Vec<u64>,
    n: u64,
    z0: u64,
}

impl<'a> McJointProvider<'a> {
    /// `k_max` bounds the spectrum indices that will be requested.
    pub fn new(sf: &'a ScaleFunctions, replicates: usize, seed: u64, k_max: usize) -> Self {
        Self {
            sf,
            theta: sf.params().theta,
            replicates,
            seed,
            cache: Mutex::new(HashMap::new()),
            k_max,
        }
    }

    /// Number of ages simulated so far.
    pub fn ages_simulated(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn total_simulations(&self) -> usize {
        self.ages_simulated() * self.replicates
    }

    fn replicates_at(&self, a: f64) -> Result<std::sync::Arc<Vec<Replicate>>> {
        let key = a.to_bits();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let tag = tags::JOINT ^ key.rotate_left(17);
        let k_max = self.k_max;
        let reps: Vec<Replicate> = (0..self.replicates as u64)
            .into_par_iter()
            .map(|r| -> Result<Replicate> {
                let s = cpp_spectra(self.sf, a, &[self.theta], tag, self.seed, r)?.remove(0);
                Ok(Replicate {
                    a: (1..=k_max).map(|k| s.a(k)).collect(),
                    n: s.n,
                    z0: s.clonal,
                })
            })
            .collect::<Result<_>>()?;
        let reps = std::sync::Arc::new(reps);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, reps.clone());
        Ok(reps)
    }
}

impl JointMomentProvider for McJointProvider<'_> {
    fn moments_at(&self, a: f64, k_list: &[usize], c: &[f64]) -> Result<AgeMoments> {
        if !(a > 0.0) {
            return Err(Error::invalid(format!(
                "joint moments need a positive age (got {a})"
            )));
        }
        if k_list.iter().any(|&k| k == 0 || k > self.k_max) {
            return Err(Error::invalid(format!(
                "spectrum index outside 1..={}",
                self.k_max
            )));
        }
        let reps = self.replicates_at(a)?;
        let n = k_list.len();
        let indicator = |r: &Replicate, l: usize| if r.z0 == l as u64 { 1.0 } else { 0.0 };
        let mut a_z = vec![vec![Estimate::default(); n]; n];
        let mut centered = vec![vec![Estimate::default(); n]; n];
        let mut n_z = vec![Estimate::default(); n];
        let mut buf = vec![0.0; reps.len()];
        for (j, &l) in k_list.iter().enumerate() {
            for (slot, r) in buf.iter_mut().zip(reps.iter()) {
                *slot = r.n as f64 * indicator(r, l);
            }
            n_z[j] = Estimate::mean_of(&buf);
            for (i, &k) in k_list.iter().enumerate() {
                for (slot, r) in buf.iter_mut().zip(reps.iter()) {
                    *slot = r.a[k - 1] as f64 * indicator(r, l);
                }
                a_z[i][j] = Estimate::mean_of(&buf);
                for (slot, r) in buf.iter_mut().zip(reps.iter()) {
                    *slot = (r.a[k - 1] as f64 - c[i] * r.n as f64) * indicator(r, l);
                }
                centered[i][j] = Estimate::mean_of(&buf);
            }
        }
        Ok(AgeMoments {
            a,
            a_z,
            n_z,
            centered,
        })
    }
}

/// The three joint moments at age `a` for one pair `(k, l)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct JointEstimate {
    pub a_z: Estimate,
    pub n_z: Estimate,
    pub centered: Estimate,
}

pub fn estimate_joint_moment(
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    a: f64,
    k: usize,
    l: usize,
    replicates: usize,
    seed: u64,
) -> Result<JointEstimate> {
    let provider = McJointProvider::new(sf, replicates, seed, k.max(l));
    let m = provider.moments_at(a, &[k, l], &[consts.c(k), consts.c(l)])?;
    Ok(JointEstimate {
        a_z: m.a_z[0][1],
        n_z: m.n_z[1],
        centered: m.centered[0][1],
    })
}

/// Kernel density estimate of a statistic against a centered Laplace density.
#[derive(Debug, Clone, Serialize)]
pub struct DensityDiagnostics {
    pub grid: Vec<f64>,
    pub kde: Vec<f64>,
    pub reference: Vec<f64>,
    pub bandwidth: f64,
    /// `sqrt(int (kde - reference)^2)` on the grid.
    pub l2_distance: f64,
    /// Kolmogorov-Smirnov distance to the Laplace CDF.
    pub ks_distance: f64,
}

/// KDE on `points` nodes spanning `+- 6` reference standard deviations.
pub fn density_diagnostics(
    samples: &[f64],
    variance: f64,
    points: usize,
    bandwidth: Option<f64>,
) -> Result<DensityDiagnostics> {
    if samples.len() < 1000 {
        return Err(Error::invalid(format!(
            "density diagnostics need at least 1000 samples (got {})",
            samples.len()
        )));
    }
    if !(variance > 0.0) {
        return Err(Error::invalid(format!(
            "reference variance must be positive (got {variance})"
        )));
    }
    let sd = variance.sqrt();
    let step = 12.0 * sd / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| -6.0 * sd + i as f64 * step).collect();
    let bandwidth = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    let kde = gaussian_kde(samples, &grid, bandwidth);
    let reference: Vec<f64> = grid.iter().map(|&x| laplace_density(variance, x)).collect();
    let sq: Vec<f64> = kde
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let l2_distance = trapezoid(&sq, step).sqrt();
    let ks_distance = ks_statistic(samples, |x| laplace_cdf(variance, x));
    Ok(DensityDiagnostics {
        grid,
        kde,
        reference,
        bandwidth,
        l2_distance,
        ks_distance,
    })
}

/// One row of the EHH curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EhhRow {
    pub theta: f64,
    pub ehh_exact_mean: f64,
    pub ehh_exact_sd: f64,
    /// Mean over replicates of `numerator / N_t`.
    pub ehh_approx: f64,
    /// Median over replicates of `|approx - exact| / exact`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EhhOutcome {
    pub rows: Vec<EhhRow>,
    /// Exact EHH per replicate along `rows` (same order).
    pub curves: Vec<Vec<f64>>,
    pub skipped: Vec<f64>,
}

/// Exact EHH on coupled mutation rates against its approximation; one marked
/// coalescent point process per replicate serves the whole grid.
pub fn run_ehh(sf: &ScaleFunctions, config: &ExperimentConfig) -> Result<EhhOutcome> {
    if config.replicates == 0 {
        return Err(Error::invalid("at least one replicate is required"));
    }
    let alpha = sf.alpha();
    let mut thetas = Vec::new();
    let mut skipped = Vec::new();
    for &th in &config.theta_grid {
        if th == 0.0 || th > alpha {
            thetas.push(th);
        } else {
            skipped.push(th);
        }
    }
    let numerators: Vec<f64> = thetas
        .iter()
        .map(|&th| -> Result<f64> {
            if th == 0.0 {
                Ok(f64::NAN)
            } else {
                Ok(ehh_approx_with(&sf.clonal_table(th)?, th))
            }
        })
        .collect::<Result<_>>()?;
    let per_rep: Vec<Vec<(f64, f64)>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<(f64, f64)>> {
            let spectra = cpp_spectra(sf, config.t, &thetas, tags::EHH, config.master_seed, r)?;
            Ok(spectra
                .iter()
                .zip(&numerators)
                .map(|(s, &num)| {
                    let exact = ehh_exact(s).unwrap_or(f64::NAN);
                    let approx = if num.is_nan() { 1.0 } else { num / s.n as f64 };
                    (exact, approx)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows = thetas
        .iter()
        .enumerate()
        .map(|(j, &th)| {
            let exact: Vec<f64> = per_rep
                .iter()
                .map(|r| r[j].0)
                .filter(|x| x.is_finite())
                .collect();
            let approx: Vec<f64> = per_rep.iter().map(|r| r[j].1).collect();
            let mut rel: Vec<f64> = per_rep
                .iter()
                .filter(|r| r[j].0.is_finite() && r[j].0 > 0.0)
                .map(|r| (r[j].1 - r[j].0).abs() / r[j].0)
                .collect();
            rel.sort_by(f64::total_cmp);
            let (mean, sd) = if exact.len() >= 2 {
                let m = Moments::of(&exact);
                (m.mean, m.variance.sqrt())
            } else {
                (exact.first().copied().unwrap_or(f64::NAN), 0.0)
            };
            EhhRow {
                theta: th,
                ehh_exact_mean: mean,
                ehh_exact_sd: sd,
                ehh_approx: approx.iter().sum::<f64>() / approx.len() as f64,
                rel_error: median(&rel),
            }
        })
        .collect();
    let curves = per_rep
        .iter()
        .map(|r| r.iter().map(|x| x.0).collect())
        .collect();
    Ok(EhhOutcome {
        rows,
        curves,
        skipped,
    })
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

/// Fraction of forward runs alive at `horizon`; runs reaching `cap`
/// individuals count as surviving.
pub fn survival_fraction(
    params: &ModelParams,
    horizon: f64,
    cap: usize,
    replicates: usize,
    seed: u64,
) -> Result<Estimate> {
    let config = ForwardConfig {
        population_cap: cap,
        ..ForwardConfig::counts_only(horizon)
    };
    let alive: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut rng = stream(seed, tags::FORWARD ^ 0x5u64.rotate_left(40), r);
            let run = simulate_forward(params, &config, &mut rng)?;
            Ok(if run.truncated || run.terminal_n > 0 {
                1.0
            } else {
                0.0
            })
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::mean_of(&alive))
}
