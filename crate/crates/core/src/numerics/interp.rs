//! Monotone piecewise-cubic Hermite interpolation on a uniform grid.

#[derive(Debug, Clone)]
pub struct Pchip {
    start: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// Builds the interpolant through `values` sampled at `start + i * step`.
    pub fn uniform(start: f64, step: f64, values: Vec<f64>) -> Self {
        assert!(values.len() >= 2, "need at least two samples");
        assert!(step > 0.0);
        let n = values.len();
        let delta: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / step).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            let (d0, d1) = (delta[i - 1], delta[i]);
            if d0 * d1 <= 0.0 {
                continue;
            }
            // fourth-order central difference where available, then the
            // Fritsch-Carlson limiter keeps each cell monotone
            let raw = if i >= 2 && i + 2 < n {
                (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2])
                    / (12.0 * step)
            } else {
                0.5 * (d0 + d1)
            };
            let bound = 3.0 * d0.abs().min(d1.abs());
            slopes[i] = if raw * d0 <= 0.0 {
                0.0
            } else {
                raw.signum() * raw.abs().min(bound)
            };
        }
        slopes[0] = end_slope(delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        slopes[n - 1] = end_slope(
            delta[n - 2],
            if n >= 3 { delta[n - 3] } else { delta[n - 2] },
        );
        Self {
            start,
            step,
            values,
            slopes,
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.step * (self.values.len() - 1) as f64
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell(&self, x: f64) -> usize {
        let raw = ((x - self.start) / self.step).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.values.len() - 2)
        }
    }

    /// Evaluates inside the cell `i` at `x`; `x` may lie slightly outside.
    pub fn eval_in_cell(&self, i: usize, x: f64) -> f64 {
        let h = self.step;
        let s = (x - (self.start + i as f64 * h)) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1
    }

    pub fn derivative_in_cell(&self, i: usize, x: f64) -> f64 {
        let h = self.step;
        let s = (x - (self.start + i as f64 * h)) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / h
    }

    /// Evaluates the interpolant; outside the grid the end cells are extended.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_in_cell(self.cell(x), x)
    }
}

fn end_slope(d0: f64, d1: f64) -> f64 {
    // three-point end formula with monotonicity guard
    let m = (3.0 * d0 - d1) / 2.0;
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}
