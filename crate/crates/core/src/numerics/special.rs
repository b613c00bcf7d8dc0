/// Exponentially scaled modified Bessel function `exp(-|x|) I0(x)`.
pub fn bessel_i0e(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 25.0 {
        // power series, all terms positive
        let q = 0.25 * ax * ax;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum * (-ax).exp()
    } else {
        // Hankel asymptotic expansion, truncated at its smallest term
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            let next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * ax * k);
            if next.abs() >= term.abs() || next < 1e-17 * sum {
                sum += next;
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        sum / (2.0 * std::f64::consts::PI * ax).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0e(1.0) * 1f64.exp() - 1.266_065_877_752_008_4).abs() < 1e-15);
        // I0(10) = 2815.716628466254
        let i10 = bessel_i0e(10.0) * 10f64.exp();
        assert!((i10 - 2_815.716_628_466_254).abs() / i10 < 1e-14);
        assert_eq!(bessel_i0e(0.0), 1.0);
    }

    #[test]
    fn branches_agree_at_switch() {
        let a = bessel_i0e(25.0);
        let b = bessel_i0e(25.000_000_1);
        assert!((a - b).abs() / a < 1e-8);
        // asymptotic branch vs series far beyond the switch point
        let x = 30.0f64;
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= q / (k as f64 * k as f64);
            sum += term;
        }
        assert!((sum * (-x).exp() - bessel_i0e(x)).abs() / bessel_i0e(x) < 1e-13);
    }
}
