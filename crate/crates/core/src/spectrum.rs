//! Frequency-spectrum formulas: the constants `c_k`, the first and second
//! moments of `A(k, t)`, the clonal law, the covariance matrices `M` and `K`
//! of the central limit theorems, the EHH approximation and the Laplace law.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifetimes::LifetimeModel;
use crate::numerics::stats::Estimate;
use crate::numerics::GaussLegendre;
use crate::scalefn::{ScaleFunctions, ScaleTable};

const CELL_NODES: usize = 6;

/// Integrates `f` over `[a, b]` with a Gauss-Legendre rule on every grid cell
/// of width `step` (cells aligned with 0), so table kinks sit on cell edges.
fn integrate_cells<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    step: f64,
    a: f64,
    b: f64,
    mut f: F,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut total = 0.0;
    let mut i = (a / step).floor() as usize;
    loop {
        let lo = (i as f64 * step).max(a);
        let hi = ((i + 1) as f64 * step).min(b);
        if hi > lo {
            total += rule.integrate(lo, hi, &mut f);
        }
        if hi >= b {
            break;
        }
        i += 1;
    }
    total
}

/// The constants `c_k = int_0^inf theta e^{-theta a} W_theta(a)^{-2} (1 - 1/W_theta(a))^{k-1} da`
/// and their partial integrals `c_k(t)` over `[0, t]`.
#[derive(Debug, Clone)]
pub struct SpectrumConstants {
    theta: f64,
    k_max: usize,
    c: Vec<f64>,
    tail_bound: Vec<f64>,
    remainder: f64,
    step: f64,
    t_max: f64,
    /// `c_k(t_i)` stored node-major: `cumulative[i * k_max + k - 1]`.
    cumulative: Vec<f64>,
    clonal: ScaleTable,
    pub warning: Option<String>,
}

impl SpectrumConstants {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `c_k` for `1 <= k <= k_max`.
    pub fn c(&self, k: usize) -> f64 {
        self.check_k(k);
        self.c[k - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    /// Bound on `|c_k - c_k(t_max)|`.
    pub fn tail_bound(&self, k: usize) -> f64 {
        self.check_k(k);
        self.tail_bound[k - 1]
    }

    /// `sum_{k > k_max} k c_k`.
    pub fn remainder(&self) -> f64 {
        self.remainder
    }

    /// `sum_{k <= k_max} k c_k`.
    pub fn weighted_mass(&self) -> f64 {
        self.c
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1) as f64 * c)
            .sum()
    }

    /// `c_k(t)`: the same integral over `[0, t]`.
    pub fn c_at(&self, k: usize, t: f64) -> f64 {
        self.check_k(k);
        if t <= 0.0 || self.theta == 0.0 {
            return 0.0;
        }
        if t >= self.t_max {
            let last = (self.cumulative.len() / self.k_max) - 1;
            let base = self.cumulative[last * self.k_max + k - 1];
            let w = self.clonal.eval(self.t_max);
            let q = 1.0 - 1.0 / w;
            let extra =
                (-self.theta * self.t_max).exp() * (1.0 - (-self.theta * (t - self.t_max)).exp());
            return base + extra / (w * w) * q.powi(k as i32 - 1);
        }
        let i = ((t / self.step).floor() as usize).min(self.cumulative.len() / self.k_max - 1);
        let node = i as f64 * self.step;
        let rule = GaussLegendre::new(CELL_NODES);
        let partial = rule.integrate(node, t, |a| self.integrand(k, a));
        self.cumulative[i * self.k_max + k - 1] + partial
    }

    fn integrand(&self, k: usize, a: f64) -> f64 {
        let w = self.clonal.eval(a);
        self.theta * (-self.theta * a).exp() / (w * w) * (1.0 - 1.0 / w).powi(k as i32 - 1)
    }

    fn check_k(&self, k: usize) {
        assert!(
            k >= 1 && k <= self.k_max,
            "k = {k} outside 1..={}",
            self.k_max
        );
    }
}

/// Computes `c_1, ..., c_{k_max}` for the mutation rate of `sf`.
///
/// The integral is done cell by cell up to the end of the table; beyond it
/// `W_theta` is frozen at its last value, which gives the closed-form tail
/// `e^{-theta T} W_theta(T)^{-2} q(T)^{k-1}`. Since `W_theta` is
/// non-decreasing, the same expression bounds the neglected error.
pub fn compute_constants(sf: &ScaleFunctions, k_max: usize) -> Result<SpectrumConstants> {
    constants_for(sf.w_theta(), sf.params().theta, k_max)
}

/// Same as [`compute_constants`] for an explicit clonal table.
pub fn constants_for(clonal: &ScaleTable, theta: f64, k_max: usize) -> Result<SpectrumConstants> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    let grid = clonal.grid();
    let nodes = grid.len();
    if theta == 0.0 {
        return Ok(SpectrumConstants {
            theta,
            k_max,
            c: vec![0.0; k_max],
            tail_bound: vec![0.0; k_max],
            remainder: 0.0,
            step: grid.step,
            t_max: grid.t_max,
            cumulative: vec![0.0; nodes * k_max],
            clonal: clonal.clone(),
            warning: Some("theta = 0: no mutations, all c_k vanish".into()),
        });
    }
    let rule = GaussLegendre::new(CELL_NODES);
    let mut cumulative = vec![0.0; nodes * k_max];
    let mut running = vec![0.0; k_max];
    let mut remainder_running = 0.0;
    let mut powers = vec![0.0; k_max];
    for i in 1..nodes {
        let (lo, hi) = ((i - 1) as f64 * grid.step, i as f64 * grid.step);
        for (x, wt) in rule.mapped(lo, hi) {
            let w = clonal.eval(x);
            let p = 1.0 / w;
            let q = 1.0 - p;
            let base = wt * theta * (-theta * x).exp() * p * p;
            let mut qk = 1.0;
            for slot in powers.iter_mut() {
                *slot = base * qk;
                qk *= q;
            }
            for (r, v) in running.iter_mut().zip(&powers) {
                *r += v;
            }
            // sum_{k > K} k p^2 q^{k-1} = q^K (1 + K p)
            remainder_running += wt * theta * (-theta * x).exp() * qk * (1.0 + k_max as f64 * p);
        }
        cumulative[i * k_max..(i + 1) * k_max].copy_from_slice(&running);
    }
    let t_end = grid.t_max;
    let w_end = clonal.eval(t_end);
    let q_end = 1.0 - 1.0 / w_end;
    let decay = (-theta * t_end).exp();
    let mut c = Vec::with_capacity(k_max);
    let mut tail_bound = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let tail = decay / (w_end * w_end) * q_end.powi(k as i32 - 1);
        c.push(running[k - 1] + tail);
        tail_bound.push(tail);
    }
    let remainder =
        remainder_running + decay * q_end.powi(k_max as i32) * (1.0 + k_max as f64 / w_end);
    Ok(SpectrumConstants {
        theta,
        k_max,
        c,
        tail_bound,
        remainder,
        step: grid.step,
        t_max: grid.t_max,
        cumulative,
        clonal: clonal.clone(),
        warning: None,
    })
}

/// `E_t A(k, t) = W(t) c_k(t)`.
pub fn mean_spectrum(sf: &ScaleFunctions, consts: &SpectrumConstants, k: usize, t: f64) -> f64 {
    sf.w().eval(t) * consts.c_at(k, t)
}

/// `P_t(Z_0(t) = k) = e^{-theta t} W(t) / W_theta(t)^2 (1 - 1/W_theta(t))^{k-1}` for `k >= 1`.
pub fn clonal_pmf(sf: &ScaleFunctions, t: f64, k: u64) -> f64 {
    clonal_pmf_with(sf, sf.w_theta(), sf.params().theta, t, k)
}

pub fn clonal_pmf_with(
    sf: &ScaleFunctions,
    clonal: &ScaleTable,
    theta: f64,
    t: f64,
    k: u64,
) -> f64 {
    if k == 0 {
        return 1.0 - clonal_nonzero_prob_with(sf, clonal, theta, t);
    }
    let w = sf.w().eval(t);
    let wt = clonal.eval(t);
    (-theta * t).exp() * w / (wt * wt) * (1.0 - 1.0 / wt).powf(k as f64 - 1.0)
}

/// `P_t(Z_0(t) > 0) = e^{-theta t} W(t) / W_theta(t)`.
pub fn clonal_nonzero_prob(sf: &ScaleFunctions, t: f64) -> f64 {
    clonal_nonzero_prob_with(sf, sf.w_theta(), sf.params().theta, t)
}

fn clonal_nonzero_prob_with(sf: &ScaleFunctions, clonal: &ScaleTable, theta: f64, t: f64) -> f64 {
    (-theta * t).exp() * sf.w().eval(t) / clonal.eval(t)
}

/// `E[N_t E] = (1 + alpha/b - e^{-alpha t}) W(t) - (1 - e^{-alpha t}) (W * P_V)(t)`.
pub fn expected_nte(sf: &ScaleFunctions, t: f64) -> f64 {
    let alpha = sf.alpha();
    let decay = (-alpha * t).exp();
    (1.0 + alpha / sf.params().b - decay) * sf.w().eval(t) - (1.0 - decay) * sf.convolution(t)
}

/// Monte Carlo (or exact) moments of the spectrum jointly with the clonal
/// family size, for a population observed at age `a` under `P_a`.
pub trait JointMomentProvider {
    fn moments_at(&self, a: f64, k_list: &[usize], c: &[f64]) -> Result<AgeMoments>;
}

/// Joint moments at one age; matrices are indexed `[i][j]` for
/// `(k, l) = (k_list[i], k_list[j])`.
#[derive(Debug, Clone, Serialize)]
pub struct AgeMoments {
    pub a: f64,
    /// `E_a[A(k, a) 1{Z_0(a) = l}]`.
    pub a_z: Vec<Vec<Estimate>>,
    /// `E_a[N_a 1{Z_0(a) = l}]`, indexed by `l`.
    pub n_z: Vec<Estimate>,
    /// `E_a[(A(k, a) - c_k N_a) 1{Z_0(a) = l}]`.
    pub centered: Vec<Vec<Estimate>>,
}

/// `E_t[A(k, t) A(l, t)]`, with the joint terms supplied by `joint`.
pub fn second_moment_spectrum(
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    k: usize,
    l: usize,
    t: f64,
    joint: &dyn JointMomentProvider,
    nodes: usize,
) -> Result<Estimate> {
    let theta = consts.theta();
    if theta == 0.0 || t <= 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let w_t = sf.w().eval(t);
    let rule = GaussLegendre::new(CELL_NODES);
    let step = sf.grid().step;
    let closed = |k: usize, l: usize| -> f64 {
        integrate_cells(&rule, step, 0.0, t, |a| {
            2.0 * theta * clonal_pmf(sf, a, l as u64) * consts.c_at(k, a)
        })
    };
    let outer = GaussLegendre::new(nodes);
    let mut joint_sum = 0.0;
    let mut joint_var = 0.0;
    for (a, wt) in outer.mapped(0.0, t) {
        let m = joint.moments_at(a, &[k, l], &[consts.c(k), consts.c(l)])?;
        let f = theta / sf.w().eval(a);
        let term = m.a_z[0][1].value + m.a_z[1][0].value;
        let se = m.a_z[0][1].se + m.a_z[1][0].se;
        joint_sum += wt * f * term;
        joint_var += (wt * f * se).powi(2);
    }
    let diagonal = if k == l { w_t * consts.c_at(k, t) } else { 0.0 };
    let value = 2.0 * w_t * w_t * consts.c_at(k, t) * consts.c_at(l, t)
        - w_t * closed(k, l)
        - w_t * closed(l, k)
        + w_t * joint_sum
        + diagonal;
    Ok(Estimate {
        value,
        se: w_t * joint_var.sqrt(),
    })
}

/// Symmetric matrix indexed by a list of spectrum indices, with Monte Carlo
/// standard errors per entry.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceMatrix {
    pub k_list: Vec<usize>,
    pub entries: Vec<Vec<f64>>,
    pub mc_error: Vec<Vec<f64>>,
}

impl CovarianceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.k_list.len();
        DMatrix::from_fn(n, n, |i, j| self.entries[i][j])
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.k_list.len();
        (0..n).all(|i| (0..n).all(|j| (self.entries[i][j] - self.entries[j][i]).abs() <= tol))
    }
}

/// Options for the covariance matrix `M`.
#[derive(Debug, Clone, Copy)]
pub struct MOptions {
    /// Gauss-Legendre nodes on `[0, a_max]` for the joint part.
    pub nodes: usize,
    /// Upper end of the joint-part quadrature; `None` picks
    /// `ln(1000) / (theta - alpha)`, capped at the table end.
    pub a_max: Option<f64>,
}

impl Default for MOptions {
    fn default() -> Self {
        Self {
            nodes: 64,
            a_max: None,
        }
    }
}

/// The pieces of `M = psi'(alpha) (closed + joint + diagonal - product)`.
#[derive(Debug, Clone, Serialize)]
pub struct MComponents {
    /// `-2 int theta e^{-theta a} W_theta^{-2} W(a) [q^{l-1} (c_k(a) - c_k) + q^{k-1} (c_l(a) - c_l)] da`.
    pub closed: Vec<Vec<f64>>,
    /// `int theta W(a)^{-1} E_a[(A(k,a) - c_k N_a) 1{Z_0(a)=l} + (k <-> l)] da`.
    pub joint: Vec<Vec<Estimate>>,
    /// `1{k = l} c_k`.
    pub diagonal: Vec<Vec<f64>>,
    /// `c_k c_l`.
    pub product: Vec<Vec<f64>>,
    pub psi_prime_alpha: f64,
    pub a_max: f64,
}

impl MComponents {
    pub fn assemble(&self) -> CovarianceMatrix {
        let n = self.closed.len();
        let mut entries = vec![vec![0.0; n]; n];
        let mut mc_error = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                entries[i][j] = self.psi_prime_alpha
                    * (self.closed[i][j] + self.joint[i][j].value + self.diagonal[i][j]
                        - self.product[i][j]);
                mc_error[i][j] = self.psi_prime_alpha * self.joint[i][j].se;
            }
        }
        CovarianceMatrix {
            k_list: Vec::new(),
            entries,
            mc_error,
        }
    }
}

/// Limit covariance `M` of `psi'(alpha) e^{-alpha t / 2} (A(k,t) - c_k N_t)`.
pub fn covariance_m(
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    k_list: &[usize],
    joint: &dyn JointMomentProvider,
    options: MOptions,
) -> Result<CovarianceMatrix> {
    let components = m_components(sf, consts, k_list, joint, options)?;
    let mut m = components.assemble();
    m.k_list = k_list.to_vec();
    Ok(m)
}

pub fn m_components(
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    k_list: &[usize],
    joint: &dyn JointMomentProvider,
    options: MOptions,
) -> Result<MComponents> {
    let theta = consts.theta();
    let alpha = sf.alpha();
    if theta <= alpha {
        return Err(Error::hypothesis(format!(
            "the covariance M requires theta > alpha (theta {theta}, alpha {alpha})"
        )));
    }
    if k_list.iter().any(|&k| k == 0 || k > consts.k_max()) {
        return Err(Error::invalid(format!(
            "k_list entries must lie in 1..={}",
            consts.k_max()
        )));
    }
    let n = k_list.len();
    let c: Vec<f64> = k_list.iter().map(|&k| consts.c(k)).collect();
    let t_max = sf.grid().t_max;
    let step = sf.grid().step;
    let rule = GaussLegendre::new(CELL_NODES);

    // closed part: h_{kl} = int theta e^{-theta a} W_theta^{-2} q^{l-1} W(a) (c_k(a) - c_k) da
    let mut h = vec![vec![0.0; n]; n];
    for (i, &k) in k_list.iter().enumerate() {
        for (j, &l) in k_list.iter().enumerate() {
            h[i][j] = integrate_cells(&rule, step, 0.0, t_max, |a| {
                let wt = sf.w_theta().eval(a);
                theta * (-theta * a).exp() / (wt * wt)
                    * (1.0 - 1.0 / wt).powi(l as i32 - 1)
                    * sf.w().eval(a)
                    * (consts.c_at(k, a) - c[i])
            });
        }
    }
    let closed: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| -2.0 * (h[i][j] + h[j][i])).collect())
        .collect();

    let a_max = options
        .a_max
        .unwrap_or((1000f64).ln() / (theta - alpha))
        .min(t_max);
    let outer = GaussLegendre::new(options.nodes);
    let mut joint_value = vec![vec![0.0; n]; n];
    let mut joint_var = vec![vec![0.0; n]; n];
    for (a, wt) in outer.mapped(0.0, a_max) {
        let m = joint.moments_at(a, k_list, &c)?;
        let f = wt * theta / sf.w().eval(a);
        for i in 0..n {
            for j in 0..n {
                let v = m.centered[i][j].value + m.centered[j][i].value;
                // the two terms come from the same replicates; add their
                // errors linearly
                let se = m.centered[i][j].se + m.centered[j][i].se;
                joint_value[i][j] += f * v;
                joint_var[i][j] += (f * se).powi(2);
            }
        }
    }
    let joint = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| Estimate {
                    value: joint_value[i][j],
                    se: joint_var[i][j].sqrt(),
                })
                .collect()
        })
        .collect();
    let diagonal = (0..n)
        .map(|i| (0..n).map(|j| if i == j { c[i] } else { 0.0 }).collect())
        .collect();
    let product = (0..n)
        .map(|i| (0..n).map(|j| c[i] * c[j]).collect())
        .collect();
    Ok(MComponents {
        closed,
        joint,
        diagonal,
        product,
        psi_prime_alpha: sf.psi_prime_alpha(),
        a_max,
    })
}

/// Multiplier of `c_k c_l` in `K = M + factor c_k c_l` for memoryless lifetimes.
///
/// With death rate `d`, each individual alive at `t` contributes a limit
/// `E_i` of mean `alpha/b` and second moment `2 alpha/b`, independently
/// given the population at `t`; the conditional variance
/// `N_t (2 alpha/b - (alpha/b)^2)` normalised by `e^{alpha t} / psi'(alpha)`
/// gives `2 - alpha/b = 1 + d/b`.
pub fn markov_k_factor(b: f64, d: f64) -> f64 {
    1.0 + d / b
}

/// `K` of the limit law of `e^{-alpha t/2} (psi'(alpha) A(k,t) - c_k e^{alpha t} E)`
/// for exponential (or infinite) lifetimes.
pub fn covariance_k_markov(
    sf: &ScaleFunctions,
    consts: &SpectrumConstants,
    m: &CovarianceMatrix,
) -> Result<CovarianceMatrix> {
    let d = match sf.params().lifetime {
        LifetimeModel::Exponential { rate } => rate,
        LifetimeModel::Infinite => 0.0,
        _ => {
            return Err(Error::hypothesis(
                "K is only available for exponential or infinite lifetimes",
            ))
        }
    };
    let factor = markov_k_factor(sf.params().b, d);
    let c: Vec<f64> = m.k_list.iter().map(|&k| consts.c(k)).collect();
    let n = c.len();
    let entries = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| m.entries[i][j] + factor * c[i] * c[j])
                .collect()
        })
        .collect();
    Ok(CovarianceMatrix {
        k_list: m.k_list.clone(),
        entries,
        mc_error: m.mc_error.clone(),
    })
}

/// Numerator `int_0^inf 2 theta e^{-theta x} (W_theta(x) - 1) dx` of the EHH
/// approximation `G_t(theta) ~ numerator / N_t`.
pub fn ehh_approx(sf: &ScaleFunctions, theta: f64) -> Result<f64> {
    if theta <= sf.alpha() {
        return Err(Error::hypothesis(format!(
            "the EHH approximation needs theta > alpha (theta {theta}, alpha {})",
            sf.alpha()
        )));
    }
    let table = sf.clonal_table(theta)?;
    Ok(ehh_approx_with(&table, theta))
}

pub fn ehh_approx_with(clonal: &ScaleTable, theta: f64) -> f64 {
    let grid = clonal.grid();
    let rule = GaussLegendre::new(CELL_NODES);
    let body = integrate_cells(&rule, grid.step, 0.0, grid.t_max, |x| {
        2.0 * theta * (-theta * x).exp() * (clonal.eval(x) - 1.0)
    });
    let tail = 2.0 * (-theta * grid.t_max).exp() * (clonal.eval(grid.t_max) - 1.0);
    body + tail
}

/// Centered Laplace law `sqrt(E) G`, `E` standard exponential and `G`
/// Gaussian with covariance `K`; characteristic function
/// `1 / (1 + lambda' K lambda / 2)`.
#[derive(Debug, Clone)]
pub struct LaplaceLaw {
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl LaplaceLaw {
    /// Accepts covariances whose most negative eigenvalue is above `-tol`;
    /// such eigenvalues are clipped to zero for sampling.
    pub fn new(covariance: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() == 0 {
            return Err(Error::invalid(
                "covariance must be a non-empty square matrix",
            ));
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let min = eig.eigenvalues.min();
        if min < -tol {
            return Err(Error::hypothesis(format!(
                "covariance is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        let roots = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()),
        );
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            covariance: sym,
            factor,
        })
    }

    pub fn univariate(variance: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, variance), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Marginal density of coordinate `i`: `exp(-sqrt 2 |x| / s) / (sqrt 2 s)`.
    pub fn marginal_density(&self, i: usize, x: f64) -> f64 {
        laplace_density(self.covariance[(i, i)], x)
    }

    pub fn marginal_cdf(&self, i: usize, x: f64) -> f64 {
        laplace_cdf(self.covariance[(i, i)], x)
    }

    pub fn characteristic_function(&self, lambda: &DVector<f64>) -> f64 {
        let q = (lambda.transpose() * &self.covariance * lambda)[(0, 0)];
        1.0 / (1.0 + 0.5 * q)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let e: f64 = Exp1.sample(rng);
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| StandardNormal.sample(rng)),
        );
        (&self.factor * z) * e.sqrt()
    }
}

/// Density of the centered univariate Laplace law with the given variance.
pub fn laplace_density(variance: f64, x: f64) -> f64 {
    let s = variance.sqrt();
    (-std::f64::consts::SQRT_2 * x.abs() / s).exp() / (std::f64::consts::SQRT_2 * s)
}

pub fn laplace_cdf(variance: f64, x: f64) -> f64 {
    let s = variance.sqrt();
    let half_tail = 0.5 * (-std::f64::consts::SQRT_2 * x.abs() / s).exp();
    if x < 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClonalRegime {
    /// `theta > alpha`.
    Sub,
    Critical,
    /// `theta < alpha`.
    Super,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentCondition {
    Holds,
    Fails,
    InfiniteHenceHolds,
}

/// Which hypotheses of the limit theorems a parameter set satisfies.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HypothesisReport {
    pub supercritical: bool,
    pub clonal_regime: ClonalRegime,
    /// `int e^{(theta - alpha) v} P_V(dv) > 1`.
    pub moment_condition: MomentCondition,
    pub moment_integral: f64,
    /// The error CLT needs `theta > alpha`.
    pub error_clt_applicable: bool,
}

pub fn check_hypotheses(sf: &ScaleFunctions) -> HypothesisReport {
    let params = sf.params();
    let alpha = sf.alpha();
    let theta = params.theta;
    let clonal_regime = if theta > alpha {
        ClonalRegime::Sub
    } else if theta < alpha {
        ClonalRegime::Super
    } else {
        ClonalRegime::Critical
    };
    let gap = theta - alpha;
    let (moment_integral, moment_condition) = match params.lifetime {
        // V = infinity almost surely: the lifetime law has no mass on the
        // finite line and the condition is not met
        LifetimeModel::Infinite => (0.0, MomentCondition::Fails),
        LifetimeModel::Exponential { rate } => {
            if gap >= rate {
                (f64::INFINITY, MomentCondition::InfiniteHenceHolds)
            } else {
                let v = rate / (rate - gap);
                (
                    v,
                    if v > 1.0 {
                        MomentCondition::Holds
                    } else {
                        MomentCondition::Fails
                    },
                )
            }
        }
        _ => {
            let v = params.lifetime.expect(|x| (gap * x).exp());
            (
                v,
                if v > 1.0 {
                    MomentCondition::Holds
                } else {
                    MomentCondition::Fails
                },
            )
        }
    };
    HypothesisReport {
        supercritical: params.b * params.lifetime.mean() > 1.0,
        clonal_regime,
        moment_condition,
        moment_integral,
        error_clt_applicable: clonal_regime == ClonalRegime::Sub,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad;
    use crate::scalefn::{GridSpec, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn markov(d: f64, theta: f64) -> ScaleFunctions {
        let lifetime = if d == 0.0 {
            LifetimeModel::Infinite
        } else {
            LifetimeModel::exponential(d).unwrap()
        };
        ScaleFunctions::new(
            ModelParams::new(1.0, theta, lifetime).unwrap(),
            GridSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn constants_mass_identity() {
        let sf = markov(0.5, 1.0);
        let c = compute_constants(&sf, 60).unwrap();
        assert!((c.weighted_mass() + c.remainder() - 1.0).abs() < 1e-9);
        assert_eq!(c.c_at(3, 0.0), 0.0);
        let partial: f64 = (1..=60).map(|k| k as f64 * c.c_at(k, 5.0)).sum();
        assert!((partial - (1.0 - (-5f64).exp())).abs() < 1e-6);
        // the c_k decrease geometrically
        assert!(c.values().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn constants_vanish_without_mutations() {
        let sf = markov(0.5, 0.0);
        let c = compute_constants(&sf, 5).unwrap();
        assert!(c.warning.is_some());
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clonal_law_reduces_and_sums() {
        let sf = markov(0.5, 0.0);
        let w = sf.w().eval(3.0);
        for k in 1..5u64 {
            let geo = (1.0 / w) * (1.0 - 1.0 / w).powi(k as i32 - 1);
            assert!((clonal_pmf(&sf, 3.0, k) - geo).abs() < 1e-14);
        }
        let sf = markov(0.5, 1.0);
        let total: f64 = (1..5000u64).map(|k| clonal_pmf(&sf, 2.0, k)).sum();
        assert!((total - clonal_nonzero_prob(&sf, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn expected_nte_values() {
        let sf = markov(0.5, 0.0);
        assert!((expected_nte(&sf, 0.0) - 0.5).abs() < 1e-15);
        let yule = markov(0.0, 0.0);
        let t: f64 = 2.5;
        assert!((expected_nte(&yule, t) - (2.0 - (-t).exp()) * t.exp()).abs() < 1e-9);
        // e^{-alpha t} E[N_t E] -> (alpha/b) * 2 / psi'(alpha)
        let big = 60.0_f64;
        let limit = (-0.5 * big).exp() * expected_nte(&sf, big);
        assert!((limit - 2.0 * 0.5 / 0.5).abs() < 1e-9);
    }

    #[test]
    fn ehh_numerator_markov_closed_form() {
        let sf = markov(0.5, 1.0);
        let got = ehh_approx(&sf, 1.0).unwrap();
        assert!((got - 4.0 / 3.0).abs() < 1e-9, "{got}");
        assert!(ehh_approx(&sf, 0.4).is_err());
        let big = ehh_approx(&sf, 50.0).unwrap();
        assert!((big - 2.0 / 99.5).abs() < 1e-9);
    }

    #[test]
    fn laplace_law_tools() {
        let total = quad(|x| laplace_density(2.0, x), -80.0, 80.0, 1e-14);
        assert!((total - 1.0).abs() < 1e-8);
        assert_eq!(laplace_cdf(2.0, 0.0), 0.5);
        let law = LaplaceLaw::univariate(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..100_000).map(|_| law.sample(&mut rng)[0]).collect();
        let m = crate::numerics::stats::Moments::of(&xs);
        assert!((m.variance - 2.0).abs() < 3.0 * m.variance_se);
        // kurtosis of the Laplace law is 6; its sampling error is large
        assert!((m.kurtosis - 6.0).abs() < 0.6, "kurtosis {}", m.kurtosis);
        assert!(
            LaplaceLaw::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 1e-6).is_err()
        );
    }

    #[test]
    fn hypothesis_flags() {
        let sf = markov(0.5, 1.0);
        let r = check_hypotheses(&sf);
        assert_eq!(r.clonal_regime, ClonalRegime::Sub);
        assert_eq!(r.moment_condition, MomentCondition::InfiniteHenceHolds);
        let sf = markov(0.5, 0.2);
        let r = check_hypotheses(&sf);
        assert_eq!(r.clonal_regime, ClonalRegime::Super);
        assert!(!r.error_clt_applicable);
        let sf = markov(0.5, 0.8);
        assert!((check_hypotheses(&sf).moment_integral - 0.5 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn k_factor_matches_yule() {
        assert_eq!(markov_k_factor(1.0, 0.0), 1.0);
    }
}
