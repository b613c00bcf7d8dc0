//! Lifetime laws of individuals: sampling, survival function and Laplace
//! transform, on the real line and in the complex plane.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::special::bessel_i0e;
use crate::numerics::{quad, GaussLegendre};

/// Density values below this are treated as the end of the support.
const TAIL_DENSITY: f64 = 1e-14;
const QUAD_TOL: f64 = 1e-15;

/// Lifetime distribution `P_V` of an individual.
///
/// The Rice law uses the density
/// `f(v) = v / s^2 * exp(-(v^2 + nu^2) / (2 s^2)) * I0(v nu / s^2)` with
/// `nu = shape` and `s = scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LifetimeModel {
    Exponential {
        rate: f64,
    },
    /// `V = infinity` almost surely (Yule tree).
    Infinite,
    Rice {
        shape: f64,
        scale: f64,
    },
    Numeric(NumericDensity),
}

/// Tabulated density with linear interpolation between the supplied points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericDensity {
    values: Vec<f64>,
    density: Vec<f64>,
    /// CDF at each grid value.
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl NumericDensity {
    /// Builds the density from `(value, density)` pairs with strictly
    /// increasing positive values; the trapezoid mass must be 1 within 1e-8.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("numeric density needs at least two points"));
        }
        let (values, density): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if values[0] < 0.0 {
            return Err(Error::invalid(
                "numeric density support must be non-negative",
            ));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "numeric density values must be strictly increasing",
            ));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::invalid(
                "numeric density must be finite and non-negative",
            ));
        }
        let mut cumulative = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for i in 1..values.len() {
            acc += 0.5 * (density[i] + density[i - 1]) * (values[i] - values[i - 1]);
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!(
                "numeric density integrates to {acc}, expected 1 within 1e-8"
            )));
        }
        Ok(Self {
            values,
            density,
            cumulative,
        })
    }

    /// Reads a two-column `value,density` CSV; a non-numeric first line is
    /// treated as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let parsed = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(p) => points.push(p),
                None if lineno == 0 => continue,
                None => {
                    return Err(Error::invalid(format!(
                        "{}:{}: expected `value,density`",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(points)
    }

    fn cell(&self, v: f64) -> Option<usize> {
        if v < self.values[0] || v > *self.values.last().unwrap() {
            return None;
        }
        let i = self.values.partition_point(|&x| x <= v);
        Some(i.saturating_sub(1).min(self.values.len() - 2))
    }

    fn density_at(&self, v: f64) -> f64 {
        match self.cell(v) {
            None => 0.0,
            Some(i) => {
                let (x0, x1) = (self.values[i], self.values[i + 1]);
                let s = (v - x0) / (x1 - x0);
                self.density[i] * (1.0 - s) + self.density[i + 1] * s
            }
        }
    }

    fn cdf_at(&self, v: f64) -> f64 {
        if v <= self.values[0] {
            return 0.0;
        }
        match self.cell(v) {
            None => 1.0,
            Some(i) => {
                let x0 = self.values[i];
                let u = v - x0;
                let slope = (self.density[i + 1] - self.density[i]) / (self.values[i + 1] - x0);
                self.cumulative[i] + self.density[i] * u + 0.5 * slope * u * u
            }
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        let i = self
            .cumulative
            .partition_point(|&c| c <= p)
            .saturating_sub(1)
            .min(self.values.len() - 2);
        let (x0, x1) = (self.values[i], self.values[i + 1]);
        let target = p - self.cumulative[i];
        let d0 = self.density[i];
        let slope = (self.density[i + 1] - d0) / (x1 - x0);
        // solve d0 u + slope u^2 / 2 = target for u in [0, x1 - x0]
        let u = if slope.abs() < 1e-300 {
            if d0 > 0.0 {
                target / d0
            } else {
                0.0
            }
        } else {
            let disc = (d0 * d0 + 2.0 * slope * target).max(0.0);
            2.0 * target / (d0 + disc.sqrt()).max(1e-300)
        };
        (x0 + u).clamp(x0, x1)
    }

    fn ensure_cumulative(&mut self) {
        if self.cumulative.len() != self.values.len() {
            if let Ok(rebuilt) = Self::new(
                self.values
                    .iter()
                    .copied()
                    .zip(self.density.iter().copied())
                    .collect(),
            ) {
                *self = rebuilt;
            }
        }
    }
}

impl LifetimeModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::invalid(format!(
                "exponential rate must be positive (got {rate}); use the infinite lifetime for rate 0"
            )));
        }
        Ok(LifetimeModel::Exponential { rate })
    }

    pub fn rice(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!(
                "Rice parameters must be positive (shape {shape}, scale {scale})"
            )));
        }
        Ok(LifetimeModel::Rice { shape, scale })
    }

    pub fn numeric(points: Vec<(f64, f64)>) -> Result<Self> {
        Ok(LifetimeModel::Numeric(NumericDensity::new(points)?))
    }

    /// Restores derived tables after deserialisation.
    pub fn normalized(mut self) -> Self {
        if let LifetimeModel::Numeric(d) = &mut self {
            d.ensure_cumulative();
        }
        self
    }

    /// Death rate `d` when the lifetime is memoryless (`0` for the Yule tree).
    pub fn markov_death_rate(&self) -> Option<f64> {
        match self {
            LifetimeModel::Exponential { rate } => Some(*rate),
            LifetimeModel::Infinite => Some(0.0),
            _ => None,
        }
    }

    /// Density of the absolutely continuous part (zero for the infinite law).
    pub fn density(&self, v: f64) -> f64 {
        if v < 0.0 {
            return 0.0;
        }
        match self {
            LifetimeModel::Exponential { rate } => rate * (-rate * v).exp(),
            LifetimeModel::Infinite => 0.0,
            LifetimeModel::Rice { shape, scale } => rice_density(*shape, *scale, v),
            LifetimeModel::Numeric(d) => d.density_at(v),
        }
    }

    /// Point beyond which the density is negligible (`< 1e-14`).
    pub fn support_end(&self) -> f64 {
        match self {
            LifetimeModel::Exponential { rate } => (rate / TAIL_DENSITY).ln().max(1.0) / rate,
            LifetimeModel::Infinite => f64::INFINITY,
            LifetimeModel::Rice { shape, scale } => {
                let mut v = shape + scale;
                while v <= *shape || rice_density(*shape, *scale, v) >= TAIL_DENSITY {
                    v += 0.25 * scale;
                }
                v
            }
            LifetimeModel::Numeric(d) => *d.values.last().unwrap(),
        }
    }

    /// `E[g(V); V < infinity]`, by quadrature over the support.
    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        match self {
            LifetimeModel::Infinite => 0.0,
            LifetimeModel::Numeric(d) => {
                let rule = GaussLegendre::new(8);
                d.values
                    .windows(2)
                    .map(|w| rule.integrate(w[0], w[1], |v| g(v) * d.density_at(v)))
                    .sum()
            }
            _ => quad(
                |v| g(v) * self.density(v),
                0.0,
                self.support_end(),
                QUAD_TOL,
            ),
        }
    }

    /// `P(V > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self {
            LifetimeModel::Exponential { rate } => (-rate * t).exp(),
            LifetimeModel::Infinite => 1.0,
            LifetimeModel::Rice { .. } => {
                let end = self.support_end();
                if t >= end {
                    0.0
                } else {
                    quad(|v| self.density(v), t, end, QUAD_TOL).clamp(0.0, 1.0)
                }
            }
            LifetimeModel::Numeric(d) => (1.0 - d.cdf_at(t)).clamp(0.0, 1.0),
        }
    }

    /// `E[exp(-lambda V)]` with `exp(-lambda * infinity) = 0`.
    pub fn laplace_transform(&self, lambda: f64) -> f64 {
        match self {
            LifetimeModel::Exponential { rate } => rate / (rate + lambda),
            LifetimeModel::Infinite => {
                if lambda == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ if lambda == 0.0 => 1.0,
            _ => self.expect(|v| (-lambda * v).exp()),
        }
    }

    /// `E[V]`, possibly infinite.
    pub fn mean(&self) -> f64 {
        match self {
            LifetimeModel::Exponential { rate } => 1.0 / rate,
            LifetimeModel::Infinite => f64::INFINITY,
            _ => self.expect(|v| v),
        }
    }

    /// Draws a lifetime; the infinite law returns `f64::INFINITY`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LifetimeModel::Exponential { rate } => {
                Exp::new(*rate).expect("validated rate").sample(rng)
            }
            LifetimeModel::Infinite => f64::INFINITY,
            LifetimeModel::Rice { shape, scale } => {
                let x: f64 = StandardNormal.sample(rng);
                let y: f64 = StandardNormal.sample(rng);
                (shape + scale * x).hypot(scale * y)
            }
            LifetimeModel::Numeric(d) => d.quantile(rng.random::<f64>()),
        }
    }

    /// Prepares `z -> E[exp(-z V)]` for complex `z` with `Re z >= 0`.
    pub fn complex_laplace(&self) -> ComplexLaplace {
        match self {
            LifetimeModel::Exponential { rate } => ComplexLaplace::Exponential(*rate),
            LifetimeModel::Infinite => ComplexLaplace::Infinite,
            LifetimeModel::Rice { .. } => {
                let end = self.support_end();
                ComplexLaplace::Panels(Arc::new(PanelTable::smooth(
                    |v| self.density(v),
                    0.0,
                    end,
                    64,
                )))
            }
            LifetimeModel::Numeric(d) => {
                ComplexLaplace::Panels(Arc::new(PanelTable::piecewise_linear(d)))
            }
        }
    }
}

fn rice_density(shape: f64, scale: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let s2 = scale * scale;
    let x = v * shape / s2;
    // exp(-(v^2+nu^2)/2s^2) I0(x) = exp(-(v-nu)^2/2s^2) I0e(x)
    v / s2 * (-(v - shape) * (v - shape) / (2.0 * s2)).exp() * bessel_i0e(x)
}

/// Laplace transform of the lifetime law at complex arguments.
#[derive(Debug, Clone)]
pub enum ComplexLaplace {
    Exponential(f64),
    Infinite,
    Panels(Arc<PanelTable>),
}

impl ComplexLaplace {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        match self {
            ComplexLaplace::Exponential(d) => Complex64::new(*d, 0.0) / (z + d),
            ComplexLaplace::Infinite => {
                if z == Complex64::new(0.0, 0.0) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            ComplexLaplace::Panels(t) => t.eval(z),
        }
    }
}

/// Panel-wise polynomial representation of a density for Filon-type
/// evaluation of `int exp(-z v) f(v) dv` at arbitrary complex `z`.
///
/// On each panel the density is replaced by its interpolating polynomial
/// (exact for piecewise-linear densities); the oscillatory integral of the
/// polynomial against `exp(-z v)` is then computed from exact moments, or by
/// Gauss-Legendre when the panel sees little oscillation.
#[derive(Debug, Clone)]
pub struct PanelTable {
    panels: Vec<Panel>,
    gl: GaussLegendre,
}

#[derive(Debug, Clone)]
struct Panel {
    start: f64,
    end: f64,
    /// Monomial coefficients in the local variable `x` in [-1, 1].
    coeffs: Vec<f64>,
    /// Density at the Gauss-Legendre nodes of the panel.
    gl_values: Vec<f64>,
}

const PANEL_DEGREE: usize = 10;
const GL_POINTS: usize = 20;
/// Below this |z h / 2| the panel integral is done by Gauss-Legendre.
const FILON_SWITCH: f64 = 5.0;

impl PanelTable {
    fn smooth<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> Self {
        let gl = GaussLegendre::new(GL_POINTS);
        let cheb: Vec<f64> = (0..=PANEL_DEGREE)
            .map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / (PANEL_DEGREE + 1) as f64).cos())
            .collect();
        let vandermonde = DMatrix::from_fn(cheb.len(), cheb.len(), |i, j| cheb[i].powi(j as i32));
        let lu = vandermonde.lu();
        let h = (b - a) / panels as f64;
        let panels = (0..panels)
            .map(|p| {
                let start = a + p as f64 * h;
                let end = start + h;
                let mid = 0.5 * (start + end);
                let half = 0.5 * h;
                let rhs =
                    DVector::from_iterator(cheb.len(), cheb.iter().map(|&x| f(mid + half * x)));
                let coeffs = lu
                    .solve(&rhs)
                    .expect("Chebyshev Vandermonde is non-singular");
                Panel {
                    start,
                    end,
                    coeffs: coeffs.iter().copied().collect(),
                    gl_values: gl.nodes.iter().map(|&x| f(mid + half * x)).collect(),
                }
            })
            .collect();
        Self { panels, gl }
    }

    fn piecewise_linear(d: &NumericDensity) -> Self {
        let gl = GaussLegendre::new(GL_POINTS);
        let panels = d
            .values
            .windows(2)
            .zip(d.density.windows(2))
            .map(|(x, y)| {
                let (start, end) = (x[0], x[1]);
                // y(x) = (y0 + y1)/2 + (y1 - y0)/2 * x on [-1, 1]
                let coeffs = vec![0.5 * (y[0] + y[1]), 0.5 * (y[1] - y[0])];
                let gl_values = gl
                    .nodes
                    .iter()
                    .map(|&u| coeffs[0] + coeffs[1] * u)
                    .collect::<Vec<_>>();
                Panel {
                    start,
                    end,
                    coeffs,
                    gl_values,
                }
            })
            .collect();
        Self { panels, gl }
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for p in &self.panels {
            let half = 0.5 * (p.end - p.start);
            let mid = 0.5 * (p.end + p.start);
            let w = z * half;
            if w.norm() <= FILON_SWITCH {
                let mut acc = Complex64::new(0.0, 0.0);
                for ((&x, &wt), &fv) in self.gl.nodes.iter().zip(&self.gl.weights).zip(&p.gl_values)
                {
                    acc += (-z * (mid + half * x)).exp() * (wt * fv);
                }
                total += acc * half;
            } else {
                let e_start = (-z * p.start).exp();
                let e_end = (-z * p.end).exp();
                // scaled moments exp(-z mid) * int_{-1}^{1} x^j exp(-w x) dx
                let mut moment = (e_start - e_end) / w;
                let mut acc = moment * p.coeffs[0];
                for (j, &c) in p.coeffs.iter().enumerate().skip(1) {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    moment = (e_start * sign - e_end) / w + moment * (j as f64) / w;
                    acc += moment * c;
                }
                total += acc * half;
            }
        }
        total
    }
}
