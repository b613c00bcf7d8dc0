//! Numerical inversion of Laplace transforms along a Bromwich line
//! (Fourier-series / trapezoid discretisation with Euler summation of the
//! alternating tail).

use num_complex::Complex64;

/// Parameters of the Euler-summed Fourier-series inversion.
///
/// The discretisation error is about `exp(-a) * sup|f|` for bounded `f`;
/// roundoff grows like `exp(a / 2) * eps`.
#[derive(Debug, Clone, Copy)]
pub struct EulerInversion {
    pub a: f64,
    /// Terms summed before Euler averaging starts.
    pub n: usize,
    /// Binomial averaging depth.
    pub m: usize,
}

impl Default for EulerInversion {
    fn default() -> Self {
        Self {
            a: 22.0,
            n: 40,
            m: 15,
        }
    }
}

/// Outcome of one inversion, with a convergence indicator obtained from the
/// spread of the last two Euler averages.
#[derive(Debug, Clone, Copy)]
pub struct Inverted {
    pub value: f64,
    pub spread: f64,
}

impl EulerInversion {
    /// Inverts `transform` at time `t > 0`.
    pub fn invert<F>(&self, transform: F, t: f64) -> Inverted
    where
        F: Fn(Complex64) -> Complex64,
    {
        assert!(t > 0.0, "inversion point must be positive");
        let x = self.a / (2.0 * t);
        let h = std::f64::consts::PI / t;
        let total = self.n + self.m;
        let mut partial = Vec::with_capacity(total + 1);
        let mut sum = 0.5 * transform(Complex64::new(x, 0.0)).re;
        partial.push(sum);
        for k in 1..=total {
            let term = transform(Complex64::new(x, k as f64 * h)).re;
            if k % 2 == 0 {
                sum += term;
            } else {
                sum -= term;
            }
            partial.push(sum);
        }
        let average = |start: usize| -> f64 {
            let mut binom = 1.0;
            let mut acc = 0.0;
            for j in 0..=self.m {
                acc += binom * partial[start + j];
                binom *= (self.m - j) as f64 / (j + 1) as f64;
            }
            acc / 2f64.powi(self.m as i32)
        };
        let scale = (0.5 * self.a).exp() / t;
        let last = average(self.n) * scale;
        let previous = average(self.n - 1) * scale;
        Inverted {
            value: last,
            spread: (last - previous).abs(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverts_bounded_functions() {
        let inv = EulerInversion::default();
        // 1/(s+1) -> exp(-t)
        for &t in &[0.05, 0.5, 1.0, 5.0, 20.0] {
            let got = inv.invert(|s| 1.0 / (s + 1.0), t).value;
            assert!((got - (-t).exp()).abs() < 1e-9, "t={t} got={got}");
        }
        // pole at the origin: (s+2)/(s(s+1)) -> 2 - exp(-t)
        for &t in &[0.02, 1.0, 7.5, 40.0] {
            let got = inv.invert(|s| (s + 2.0) / (s * (s + 1.0)), t).value;
            let want = 2.0 - (-t).exp();
            assert!((got - want).abs() / want < 1e-9, "t={t} got={got}");
        }
    }

    #[test]
    fn oscillating_inverse() {
        let inv = EulerInversion::default();
        for &t in &[0.3, 2.0, 6.0] {
            let got = inv.invert(|s| 1.0 / (s * s + 1.0), t).value;
            assert!((got - t.sin()).abs() < 1e-8, "t={t}");
        }
    }
}
