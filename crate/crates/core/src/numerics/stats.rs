//! Sample statistics and goodness-of-fit helpers used by the Monte Carlo checks.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// First four sample moments with standard errors where cheap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub mean_se: f64,
    /// Large-sample standard error of the variance, `sqrt((m4 - m2^2) / n)`.
    pub variance_se: f64,
    pub skewness: f64,
    /// Non-excess kurtosis (3 for a Gaussian, 6 for a Laplace law).
    pub kurtosis: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        assert!(n >= 2, "need at least two samples");
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= nf;
        m3 /= nf;
        m4 /= nf;
        let variance = m2 * nf / (nf - 1.0);
        Self {
            n,
            mean,
            variance,
            mean_se: (variance / nf).sqrt(),
            variance_se: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
            skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
            kurtosis: if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 },
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }

    /// Sample mean and its standard error.
    pub fn mean_of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            se: (var / n).sqrt(),
        }
    }
}

/// Bootstrap standard error of a scalar statistic.
pub fn bootstrap_se<R, F>(xs: &[f64], resamples: usize, rng: &mut R, stat: F) -> f64
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let values: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = xs[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    Moments::of(&values).variance.sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic; ties are handled by stepping
/// both empirical CDFs past each distinct value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// P-value of a KS statistic with effective sample size `n_eff`
/// (`n` for one sample, `n m / (n + m)` for two).
pub fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_survival((s + 0.12 + 0.11 / s) * d)
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, Copy)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square goodness of fit of integer observations against a pmf on
/// `{first, first+1, ...}`. Cells are merged left to right until each has an
/// expected count of at least `min_expected`; the remaining upper tail forms
/// the last cell.
pub fn chi_square_gof<F: Fn(u64) -> f64>(
    observations: &[u64],
    first: u64,
    pmf: F,
    min_expected: f64,
) -> ChiSquareTest {
    let n = observations.len() as f64;
    let max_obs = observations.iter().copied().max().unwrap_or(first);
    let mut observed_at = vec![0u64; (max_obs - first + 1) as usize];
    for &x in observations {
        assert!(x >= first, "observation below pmf support");
        observed_at[(x - first) as usize] += 1;
    }
    let count_at = |k: u64| observed_at.get((k - first) as usize).copied().unwrap_or(0) as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs_acc, mut exp_acc, mut mass) = (0.0, 0.0, 0.0);
    let mut k = first;
    loop {
        let p = pmf(k);
        mass += p;
        exp_acc += n * p;
        obs_acc += count_at(k);
        k += 1;
        let tail_expected = n * (1.0 - mass).max(0.0);
        if tail_expected < min_expected {
            // fold the upper tail {x >= k} into the open cell
            obs_acc += observations.iter().filter(|&&x| x >= k).count() as f64;
            exp_acc += tail_expected;
            match cells.last_mut() {
                Some(last) if exp_acc < min_expected => {
                    last.0 += obs_acc;
                    last.1 += exp_acc;
                }
                _ => cells.push((obs_acc, exp_acc)),
            }
            break;
        }
        if exp_acc >= min_expected {
            cells.push((obs_acc, exp_acc));
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
    }
    let statistic: f64 = cells
        .iter()
        .filter(|c| c.1 > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquareTest {
        statistic,
        dof,
        p_value,
    }
}

/// Silverman's rule-of-thumb bandwidth `1.06 sd n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let m = Moments::of(samples);
    1.06 * m.variance.sqrt() * (samples.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn gaussian_kde(samples: &[f64], grid: &[f64], bandwidth: f64) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let cutoff = 9.0 * bandwidth;
    grid.iter()
        .map(|&g| {
            let lo = xs.partition_point(|&x| x < g - cutoff);
            let hi = xs.partition_point(|&x| x <= g + cutoff);
            let s: f64 = xs[lo..hi]
                .iter()
                .map(|&x| {
                    let u = (g - x) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum();
            s * norm
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments_of_simple_sample() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m.mean - 2.5).abs() < 1e-15);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(m.skewness.abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // P(K > 1.36) ~ 0.049
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 2e-3);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn uniform_sample_passes_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, 5000.0) > 0.01);
        let ys: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let d2 = ks_two_sample(&xs, &ys);
        assert!(ks_pvalue(d2, 2500.0) > 0.01);
    }

    #[test]
    fn chi_square_accepts_true_geometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 0.3f64;
        let obs: Vec<u64> = (0..20000)
            .map(|_| {
                let u: f64 = rng.random();
                1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u64
            })
            .collect();
        let t = chi_square_gof(&obs, 1, |k| p * (1.0 - p).powi(k as i32 - 1), 5.0);
        assert!(t.p_value > 0.01, "{t:?}");
        let wrong = chi_square_gof(&obs, 1, |k| 0.35 * 0.65f64.powi(k as i32 - 1), 5.0);
        assert!(wrong.p_value < 1e-6);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let bw = silverman_bandwidth(&xs);
        let grid: Vec<f64> = (0..=800).map(|i| -2.0 + i as f64 * 0.005).collect();
        let kde = gaussian_kde(&xs, &grid, bw);
        let mass = crate::numerics::quadrature::trapezoid(&kde, 0.005);
        assert!((mass - 1.0).abs() < 1e-3);
    }
}
