//! Laplace exponents, the Malthusian parameter and the scale functions `W`
//! and `W_theta`.
//!
//! `W` has Laplace transform `1/psi` and `W_theta` has transform
//! `1/psi_theta` with `psi_theta(x) = x psi(x + theta) / (x + theta)`. Both
//! are tabulated by inverting the shifted transform `1/psi(lambda + s)`, whose
//! inverse `exp(-s t) W(t)` stays bounded, and multiplying back by `exp(s t)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifetimes::{ComplexLaplace, LifetimeModel};
use crate::numerics::{quad, EulerInversion, GaussLegendre, Pchip};

/// Relative spread between successive Euler averages tolerated by the tables.
const INVERSION_SPREAD: f64 = 1e-7;

/// Birth rate, mutation rate and lifetime law of the splitting tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub b: f64,
    pub theta: f64,
    pub lifetime: LifetimeModel,
}

impl ModelParams {
    /// Validates the rates and rejects non-supercritical trees.
    pub fn new(b: f64, theta: f64, lifetime: LifetimeModel) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::invalid(format!(
                "birth rate must be positive (got {b})"
            )));
        }
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::invalid(format!(
                "mutation rate must be non-negative (got {theta})"
            )));
        }
        let growth = b * lifetime.mean();
        if growth <= 1.0 {
            return Err(Error::NotSupercritical(growth));
        }
        Ok(Self { b, theta, lifetime })
    }

    /// Same tree with another mutation rate.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.b, theta, self.lifetime.clone())
    }

    /// `psi(x) = x - b (1 - E exp(-x V))`.
    pub fn psi(&self, x: f64) -> f64 {
        x - self.b * (1.0 - self.lifetime.laplace_transform(x))
    }

    /// Clonal exponent `psi_theta(x) = x psi(x + theta) / (x + theta)`.
    pub fn psi_theta(&self, x: f64) -> f64 {
        psi_theta_at(self, self.theta, x)
    }

    /// `psi'(x) = 1 - b E[V exp(-x V)]`.
    pub fn psi_derivative(&self, x: f64) -> f64 {
        match self.lifetime {
            LifetimeModel::Infinite => 1.0,
            LifetimeModel::Exponential { rate } => 1.0 - self.b * rate / ((rate + x) * (rate + x)),
            _ => 1.0 - self.b * self.lifetime.expect(|r| r * (-x * r).exp()),
        }
    }

    /// `mu = 1 / (b E[V] - 1)`, zero when the mean lifetime is infinite.
    pub fn mu(&self) -> f64 {
        let m = self.lifetime.mean();
        if m.is_infinite() {
            0.0
        } else {
            1.0 / (self.b * m - 1.0)
        }
    }

    /// Complex-argument view of the exponents.
    pub fn complex_exponent(&self) -> ComplexExponent {
        ComplexExponent {
            b: self.b,
            laplace: self.lifetime.complex_laplace(),
        }
    }
}

fn psi_theta_at(params: &ModelParams, theta: f64, x: f64) -> f64 {
    if theta == 0.0 {
        params.psi(x)
    } else {
        x * params.psi(x + theta) / (x + theta)
    }
}

/// `psi` and `psi_theta` at complex arguments.
#[derive(Debug, Clone)]
pub struct ComplexExponent {
    b: f64,
    laplace: ComplexLaplace,
}

impl ComplexExponent {
    pub fn psi(&self, z: Complex64) -> Complex64 {
        z - self.b * (Complex64::new(1.0, 0.0) - self.laplace.eval(z))
    }

    pub fn psi_theta(&self, theta: f64, z: Complex64) -> Complex64 {
        if theta == 0.0 {
            self.psi(z)
        } else {
            z * self.psi(z + theta) / (z + theta)
        }
    }
}

/// Largest root of `psi`.
pub fn malthusian_alpha(params: &ModelParams) -> Result<f64> {
    if matches!(params.lifetime, LifetimeModel::Infinite) {
        return Ok(params.b);
    }
    if let Some(d) = params.lifetime.markov_death_rate() {
        return Ok(params.b - d);
    }
    let mean = params.lifetime.mean();
    let mut hi = params.b + 1.0 / mean;
    let mut doublings = 0;
    while params.psi(hi) <= 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::BracketNotFound(hi));
        }
    }
    let mut lo = 1e-12;
    if params.psi(lo) >= 0.0 {
        return Err(Error::BracketNotFound(lo));
    }
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if params.psi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut alpha = 0.5 * (lo + hi);
    // one Newton step removes the last bisection bit
    let step = params.psi(alpha) / params.psi_derivative(alpha);
    if step.abs() < hi - lo + 1e-15 {
        alpha -= step;
    }
    let residual = params.psi(alpha).abs();
    if residual > 1e-12 * alpha.max(1.0) {
        return Err(Error::Numerical(format!(
            "|psi(alpha)| = {residual:e} at alpha = {alpha}"
        )));
    }
    Ok(alpha)
}

/// Uniform time grid `0, step, ..., t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub t_max: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::with_t_max(40.0)
    }
}

impl GridSpec {
    /// `t_max` split into 2000 cells.
    pub fn with_t_max(t_max: f64) -> Self {
        Self {
            t_max,
            step: t_max / 2000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.step > 0.0 && self.step <= self.t_max) {
            return Err(Error::invalid(format!(
                "grid needs 0 < step <= t_max (step {}, t_max {})",
                self.step, self.t_max
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.t_max / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScaleKind {
    Plain,
    Clonal,
}

#[derive(Debug, Clone)]
enum Repr {
    /// Exponential or infinite lifetimes: `W(t) = (b e^{alpha t} - d)/alpha`
    /// and `W_theta(t) = ((theta + d) - b e^{(alpha - theta) t})/(theta - alpha)`.
    Markov { b: f64, d: f64, theta: f64 },
    /// Shifted values `exp(-shift t) W(t)` on the grid; `slope` extends the
    /// critical clonal table linearly past `t_max`.
    Table { g: Pchip, slope: f64 },
}

/// `W` or `W_theta` on `[0, t_max]`, exact or interpolated.
#[derive(Debug, Clone)]
pub struct ScaleTable {
    kind: ScaleKind,
    theta: f64,
    alpha: f64,
    shift: f64,
    grid: GridSpec,
    repr: Repr,
    /// `W` at the grid nodes, for inversion by bisection.
    nodes: Vec<f64>,
    max_spread: f64,
}

impl ScaleTable {
    fn markov(
        kind: ScaleKind,
        params: &ModelParams,
        theta: f64,
        alpha: f64,
        grid: GridSpec,
    ) -> Self {
        let d = params
            .lifetime
            .markov_death_rate()
            .expect("Markov lifetime");
        let mut table = Self {
            kind,
            theta,
            alpha,
            shift: shift_for(kind, alpha, theta),
            grid,
            repr: Repr::Markov {
                b: params.b,
                d,
                theta,
            },
            nodes: Vec::new(),
            max_spread: 0.0,
        };
        table.nodes = grid.times().iter().map(|&t| table.eval(t)).collect();
        table
    }

    fn inverted(
        kind: ScaleKind,
        params: &ModelParams,
        theta: f64,
        alpha: f64,
        psi_prime_alpha: f64,
        grid: GridSpec,
    ) -> Result<Self> {
        grid.validate()?;
        let shift = shift_for(kind, alpha, theta);
        let exponent = params.complex_exponent();
        let transform = |lambda: Complex64| -> Complex64 {
            let z = lambda + shift;
            match kind {
                ScaleKind::Plain => 1.0 / exponent.psi(z),
                ScaleKind::Clonal => 1.0 / exponent.psi_theta(theta, z),
            }
        };
        let inversion = EulerInversion::default();
        let times = grid.times();
        let mut g = Vec::with_capacity(times.len());
        let mut max_spread: f64 = 0.0;
        g.push(1.0);
        for &t in &times[1..] {
            let out = inversion.invert(transform, t);
            let rel = out.spread / out.value.abs().max(1e-300);
            if !(out.value.is_finite() && rel <= INVERSION_SPREAD) {
                return Err(Error::InversionDiverged {
                    t,
                    spread: out.spread,
                });
            }
            max_spread = max_spread.max(rel);
            g.push(out.value);
        }
        // the shifted functions are non-decreasing; remove inversion noise
        // where they have flattened out
        for i in 1..g.len() {
            if g[i] < g[i - 1] {
                g[i] = g[i - 1];
            }
        }
        let slope = if kind == ScaleKind::Clonal && theta == alpha {
            alpha / psi_prime_alpha
        } else {
            0.0
        };
        let nodes = times
            .iter()
            .zip(&g)
            .map(|(&t, &v)| (shift * t).exp() * v)
            .collect();
        Ok(Self {
            kind,
            theta,
            alpha,
            shift,
            grid,
            repr: Repr::Table {
                g: Pchip::uniform(0.0, grid.step, g),
                slope,
            },
            nodes,
            max_spread,
        })
    }

    pub fn kind(&self) -> ScaleKind {
        self.kind
    }

    /// Mutation rate of a clonal table (0 for `W`).
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Exponential rate removed before tabulation.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn t_max(&self) -> f64 {
        self.grid.t_max
    }

    /// Values at the grid nodes.
    pub fn node_values(&self) -> &[f64] {
        &self.nodes
    }

    /// Whether the values come from closed forms rather than inversion.
    pub fn is_closed_form(&self) -> bool {
        matches!(self.repr, Repr::Markov { .. })
    }

    /// Largest relative spread of the Euler averages over the grid.
    pub fn max_spread(&self) -> f64 {
        self.max_spread
    }

    /// `exp(-shift t) W(t)`.
    pub fn shifted(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.repr {
            Repr::Markov { .. } => (-self.shift * t).exp() * self.eval(t),
            Repr::Table { g, slope } => {
                if t <= self.grid.t_max {
                    g.eval(t)
                } else {
                    let last = *g.values().last().expect("non-empty table");
                    last + slope * (t - self.grid.t_max)
                }
            }
        }
    }

    /// The scale function at `t` (zero for negative `t`).
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self.repr {
            Repr::Markov { b, d, theta } => {
                let alpha = self.alpha;
                match self.kind {
                    ScaleKind::Plain => (b * (alpha * t).exp() - d) / alpha,
                    ScaleKind::Clonal if theta == 0.0 => (b * (alpha * t).exp() - d) / alpha,
                    ScaleKind::Clonal if theta == alpha => 1.0 + b * t,
                    ScaleKind::Clonal => {
                        ((theta + d) - b * ((alpha - theta) * t).exp()) / (theta - alpha)
                    }
                }
            }
            Repr::Table { .. } => (self.shift * t).exp() * self.shifted(t),
        }
    }

    /// `t` with `W(t) = y`, or `None` when `y` lies beyond the table.
    pub fn inverse(&self, y: f64) -> Result<Option<f64>> {
        if !(y >= 1.0) {
            return Err(Error::invalid(format!(
                "scale function values start at 1 (got {y})"
            )));
        }
        if y == 1.0 {
            return Ok(Some(0.0));
        }
        if let Repr::Markov { b, d, theta } = self.repr {
            return Ok(markov_inverse(self.kind, b, d, theta, self.alpha, y));
        }
        let last = *self.nodes.last().expect("non-empty table");
        if y > last {
            return Ok(None);
        }
        let upper = self.nodes.partition_point(|&w| w < y).max(1);
        let cell = upper - 1;
        Ok(Some(self.solve_in_cell(cell, y)))
    }

    fn solve_in_cell(&self, cell: usize, y: f64) -> f64 {
        let Repr::Table { g, .. } = &self.repr else {
            unreachable!("closed forms are inverted directly")
        };
        let h = self.grid.step;
        let (mut lo, mut hi) = (cell as f64 * h, (cell + 1) as f64 * h);
        let target = y.ln();
        let f = |t: f64| self.shift * t + g.eval_in_cell(cell, t).ln() - target;
        // start from the log-linear interpolant
        let (w0, w1) = (self.nodes[cell].ln(), self.nodes[cell + 1].ln());
        let mut t = if w1 > w0 {
            lo + (target - w0) / (w1 - w0) * h
        } else {
            lo
        };
        for _ in 0..60 {
            let value = f(t);
            if value.abs() < 1e-13 {
                break;
            }
            if value > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let slope = self.shift + g.derivative_in_cell(cell, t) / g.eval_in_cell(cell, t);
            let next = t - value / slope;
            t = if slope > 0.0 && next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 * hi.max(1.0) {
                break;
            }
        }
        t
    }
}

fn shift_for(kind: ScaleKind, alpha: f64, theta: f64) -> f64 {
    match kind {
        ScaleKind::Plain => alpha,
        ScaleKind::Clonal => (alpha - theta).max(0.0),
    }
}

fn markov_inverse(kind: ScaleKind, b: f64, d: f64, theta: f64, alpha: f64, y: f64) -> Option<f64> {
    if kind == ScaleKind::Plain || theta == 0.0 {
        return Some(((alpha * y + d) / b).ln() / alpha);
    }
    if theta == alpha {
        return Some((y - 1.0) / b);
    }
    let arg = ((theta + d) - (theta - alpha) * y) / b;
    if arg <= 0.0 {
        return None;
    }
    let t = arg.ln() / (alpha - theta);
    if t.is_finite() && t >= 0.0 {
        Some(t)
    } else {
        None
    }
}

/// `E N_t` and `P(N_t > 0)` for a tree started from one individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationMoments {
    pub expected_n: f64,
    pub survival_prob: f64,
}

/// The Malthusian data of a model together with its `W` and `W_theta` tables.
#[derive(Debug, Clone)]
pub struct ScaleFunctions {
    params: ModelParams,
    alpha: f64,
    psi_prime_alpha: f64,
    mu: f64,
    w: ScaleTable,
    w_theta: ScaleTable,
}

impl ScaleFunctions {
    /// Closed forms for memoryless lifetimes, numerical inversion otherwise.
    pub fn new(params: ModelParams, grid: GridSpec) -> Result<Self> {
        Self::build(params, grid, false)
    }

    /// Always tabulates by numerical inversion (used to cross-check the
    /// closed forms).
    pub fn inverted(params: ModelParams, grid: GridSpec) -> Result<Self> {
        Self::build(params, grid, true)
    }

    fn build(params: ModelParams, grid: GridSpec, force_inversion: bool) -> Result<Self> {
        grid.validate()?;
        let alpha = malthusian_alpha(&params)?;
        let psi_prime_alpha = params.psi_derivative(alpha);
        if !(psi_prime_alpha > 0.0) {
            return Err(Error::Numerical(format!(
                "psi'(alpha) = {psi_prime_alpha} is not positive"
            )));
        }
        let mu = params.mu();
        let theta = params.theta;
        let markov = params.lifetime.markov_death_rate().is_some() && !force_inversion;
        let table = |kind, theta| -> Result<ScaleTable> {
            if markov {
                Ok(ScaleTable::markov(kind, &params, theta, alpha, grid))
            } else {
                ScaleTable::inverted(kind, &params, theta, alpha, psi_prime_alpha, grid)
            }
        };
        let w = table(ScaleKind::Plain, 0.0)?;
        let w_theta = if theta == 0.0 {
            let mut t = w.clone();
            t.kind = ScaleKind::Clonal;
            t
        } else {
            table(ScaleKind::Clonal, theta)?
        };
        Ok(Self {
            params,
            alpha,
            psi_prime_alpha,
            mu,
            w,
            w_theta,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn psi_prime_alpha(&self) -> f64 {
        self.psi_prime_alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn w(&self) -> &ScaleTable {
        &self.w
    }

    pub fn w_theta(&self) -> &ScaleTable {
        &self.w_theta
    }

    pub fn grid(&self) -> GridSpec {
        self.w.grid
    }

    /// `W_theta` for another mutation rate on the same grid.
    pub fn clonal_table(&self, theta: f64) -> Result<ScaleTable> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::invalid(format!(
                "mutation rate must be non-negative (got {theta})"
            )));
        }
        if self.w.is_closed_form() {
            Ok(ScaleTable::markov(
                ScaleKind::Clonal,
                &self.params,
                theta,
                self.alpha,
                self.grid(),
            ))
        } else {
            ScaleTable::inverted(
                ScaleKind::Clonal,
                &self.params,
                theta,
                self.alpha,
                self.psi_prime_alpha,
                self.grid(),
            )
        }
    }

    /// `lim W_theta(t) = theta / psi(theta)`, defined when `theta > alpha`.
    pub fn clonal_limit(&self) -> Result<f64> {
        self.clonal_limit_at(self.params.theta)
    }

    pub fn clonal_limit_at(&self, theta: f64) -> Result<f64> {
        if theta <= self.alpha {
            return Err(Error::hypothesis(format!(
                "W_theta has no finite limit unless theta > alpha (theta {theta}, alpha {})",
                self.alpha
            )));
        }
        Ok(theta / self.params.psi(theta))
    }

    /// `1/psi'(alpha) - exp(-alpha t) W(t)`, positive and non-increasing.
    pub fn renewal_remainder(&self, t: f64) -> f64 {
        1.0 / self.psi_prime_alpha - self.w.shifted(t)
    }

    /// `t` with `W(t) = y`; `None` beyond the table.
    pub fn inverse_w(&self, y: f64) -> Result<Option<f64>> {
        self.w.inverse(y)
    }

    /// Stieltjes convolution `(W * P_V)(t) = int_{[0,t]} W(t - s) P_V(ds)`.
    pub fn convolution(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let lifetime = &self.params.lifetime;
        match lifetime {
            LifetimeModel::Infinite => 0.0,
            LifetimeModel::Exponential { rate } => {
                rate / self.alpha * ((self.alpha * t).exp() - 1.0)
            }
            _ => {
                let end = t.min(lifetime.support_end());
                let scale = self.w.eval(t);
                // split at grid nodes of W(t - s) so each piece is smooth
                let h = self.grid().step;
                let rule = GaussLegendre::new(12);
                let mut total = 0.0;
                let mut s0 = 0.0;
                while s0 < end {
                    let s1 = (s0 + h).min(end);
                    total += rule.integrate(s0, s1, |s| self.w.eval(t - s) * lifetime.density(s));
                    s0 = s1;
                }
                if total.is_finite() {
                    total
                } else {
                    quad(
                        |s| self.w.eval(t - s) * lifetime.density(s),
                        0.0,
                        end,
                        1e-14 * scale,
                    )
                }
            }
        }
    }

    /// `E N_t = W - W * P_V` and `P(N_t > 0) = 1 - (W * P_V)/W`.
    pub fn population_moments(&self, t: f64) -> PopulationMoments {
        let w = self.w.eval(t);
        let conv = self.convolution(t);
        PopulationMoments {
            expected_n: w - conv,
            survival_prob: 1.0 - conv / w,
        }
    }
}

/// Shifted scale function `exp(-alpha t) W(t)` on a grid, from the renewal
/// equation `g(t) = exp(-alpha t) + int_0^t g(t - r) b exp(-alpha r) P(V > r) dr`.
///
/// Trapezoid rule at steps `h` and `h/2` combined by Richardson
/// extrapolation. Independent of the Laplace route; used as a cross-check.
pub fn renewal_shifted_scale(params: &ModelParams, alpha: f64, grid: GridSpec) -> Vec<f64> {
    let coarse = renewal_trapezoid(params, alpha, grid.step, grid.len());
    let fine = renewal_trapezoid(params, alpha, grid.step / 2.0, 2 * grid.len() - 1);
    coarse
        .iter()
        .enumerate()
        .map(|(i, &c)| (4.0 * fine[2 * i] - c) / 3.0)
        .collect()
}

fn renewal_trapezoid(params: &ModelParams, alpha: f64, h: f64, n: usize) -> Vec<f64> {
    let lifetime = &params.lifetime;
    // survival on the grid by cumulative Gauss-Legendre
    let rule = GaussLegendre::new(10);
    let mut survival = Vec::with_capacity(n);
    let mut s = 1.0;
    survival.push(s);
    for j in 1..n {
        s = match lifetime {
            LifetimeModel::Infinite => 1.0,
            LifetimeModel::Exponential { rate } => (-rate * j as f64 * h).exp(),
            _ => s - rule.integrate((j - 1) as f64 * h, j as f64 * h, |v| lifetime.density(v)),
        };
        survival.push(s.max(0.0));
    }
    let kernel: Vec<f64> = (0..n)
        .map(|j| params.b * (-alpha * j as f64 * h).exp() * survival[j])
        .collect();
    let mut g = vec![0.0; n];
    g[0] = 1.0;
    for i in 1..n {
        let mut acc = 0.5 * kernel[i] * g[0];
        for j in 1..i {
            acc += kernel[j] * g[i - j];
        }
        g[i] = ((-alpha * i as f64 * h).exp() + h * acc) / (1.0 - 0.5 * h * kernel[0]);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_params(theta: f64) -> ModelParams {
        ModelParams::new(1.0, theta, LifetimeModel::exponential(0.5).unwrap()).unwrap()
    }

    fn rice_params(theta: f64) -> ModelParams {
        ModelParams::new(1.0, theta, LifetimeModel::rice(1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn rejects_subcritical_trees() {
        let e = LifetimeModel::exponential(2.0).unwrap();
        assert!(matches!(
            ModelParams::new(1.0, 0.0, e),
            Err(Error::NotSupercritical(_))
        ));
        assert!(ModelParams::new(-1.0, 0.0, LifetimeModel::Infinite).is_err());
    }

    #[test]
    fn psi_values() {
        let p = exp_params(1.0);
        assert_eq!(p.psi(0.0), 0.0);
        // x (x + d - b) / (x + d)
        assert!((p.psi(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.psi_theta(1.0) - 0.6).abs() < 1e-15);
        let y = ModelParams::new(1.0, 0.0, LifetimeModel::Infinite).unwrap();
        assert_eq!(y.psi(2.0), 1.0);
        assert_eq!(y.psi_theta(0.7), y.psi(0.7));
    }

    #[test]
    fn psi_closed_form_matches_direct_quadrature() {
        let p = exp_params(0.0);
        for &x in &[0.1, 1.0, 3.0] {
            let direct = x - quad(
                |r| (1.0 - (-r * x).exp()) * 0.5 * (-0.5 * r).exp(),
                0.0,
                120.0,
                1e-14,
            );
            assert!((p.psi(x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn malthusian_parameters() {
        assert_eq!(malthusian_alpha(&exp_params(0.0)).unwrap(), 0.5);
        let rice = rice_params(0.0);
        let alpha = malthusian_alpha(&rice).unwrap();
        assert!((alpha - 0.5144040).abs() < 1e-6, "alpha = {alpha}");
        let h = 1e-5;
        let fd = (rice.psi(alpha + h) - rice.psi(alpha - h)) / (2.0 * h);
        assert!((rice.psi_derivative(alpha) - fd).abs() < 1e-6);
    }

    #[test]
    fn markov_inversion_matches_closed_forms() {
        let grid = GridSpec::with_t_max(20.0);
        let closed = ScaleFunctions::new(exp_params(1.0), grid).unwrap();
        let inv = ScaleFunctions::inverted(exp_params(1.0), grid).unwrap();
        assert!(closed.w().is_closed_form() && !inv.w().is_closed_form());
        for i in 0..=400 {
            let t = i as f64 * 0.05;
            for (a, b) in [(closed.w(), inv.w()), (closed.w_theta(), inv.w_theta())] {
                let (x, y) = (a.eval(t), b.eval(t));
                assert!((x - y).abs() / x < 1e-6, "t={t}: {x} vs {y}");
            }
        }
        assert!((closed.w().eval(2.0) - (2.0 * std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let sf = ScaleFunctions::new(rice_params(1.0), GridSpec::with_t_max(20.0)).unwrap();
        assert_eq!(sf.inverse_w(1.0).unwrap(), Some(0.0));
        assert!(sf.inverse_w(0.5).is_err());
        for i in 0..100 {
            let y = 1.0 + 1.37 * i as f64 * i as f64;
            let t = sf.inverse_w(y).unwrap().unwrap();
            assert!((sf.w().eval(t) - y).abs() / y < 1e-10, "y={y}");
        }
        assert_eq!(sf.inverse_w(1e30).unwrap(), None);
        let m = ScaleFunctions::new(exp_params(1.0), GridSpec::default()).unwrap();
        let t = m
            .inverse_w(2.0 * std::f64::consts::E - 1.0)
            .unwrap()
            .unwrap();
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn renewal_route_agrees_with_inversion() {
        let grid = GridSpec {
            t_max: 10.0,
            step: 0.01,
        };
        let sf = ScaleFunctions::new(rice_params(0.0), grid).unwrap();
        let g = renewal_shifted_scale(sf.params(), sf.alpha(), grid);
        for (i, v) in g.iter().enumerate().step_by(50) {
            let t = i as f64 * grid.step;
            assert!((sf.w().shifted(t) - v).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn population_moments_markov() {
        let sf = ScaleFunctions::new(exp_params(0.0), GridSpec::default()).unwrap();
        let pm = sf.population_moments(2.0);
        let e = 1f64.exp();
        assert!((pm.survival_prob - 0.5 * e / (e - 0.5)).abs() < 1e-12);
        let y = ScaleFunctions::new(
            ModelParams::new(1.0, 0.0, LifetimeModel::Infinite).unwrap(),
            GridSpec::default(),
        )
        .unwrap();
        let pm = y.population_moments(3.0);
        assert_eq!(pm.survival_prob, 1.0);
        assert!((pm.expected_n - 3f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn numeric_convolution_matches_markov_closed_form() {
        // the quadrature route, fed with the exponential closed form
        let sf = ScaleFunctions::inverted(exp_params(0.0), GridSpec::default()).unwrap();
        let t = 3.0;
        let lifetime = &sf.params().lifetime;
        let direct = quad(|s| sf.w().eval(t - s) * lifetime.density(s), 0.0, t, 1e-12);
        let want = 0.5 / 0.5 * ((0.5 * t).exp() - 1.0);
        assert!((direct - want).abs() / want < 1e-7);
    }
}
