//! Scalar special functions and log-densities shared across modules.

use libm::erfc;
use libm::lgamma as ln_gamma;
use std::f64::consts::{PI, TAU};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 30.0 {
        i0_series(ax)
    } else {
        ln_bessel_i0(ax).exp()
    }
}

pub fn ln_bessel_i0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 30.0 {
        return i0_series(ax).ln();
    }
    // asymptotic expansion, terms prod (2j-1)^2 / (k! (8x)^k)
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..12 {
        let c = (2 * k - 1) as f64;
        term *= c * c / (k as f64 * 8.0 * ax);
        sum += term;
    }
    ax - 0.5 * (TAU * ax).ln() + sum.ln()
}

fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn ln_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
}

/// Gamma log-density with shape/rate parameterization.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta_fn(a, b)
}

pub fn ln_uniform_pdf(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi {
        f64::NEG_INFINITY
    } else {
        -(hi - lo).ln()
    }
}

pub fn ln_von_mises_pdf(x: f64, m: f64, k: f64) -> f64 {
    k * (x - m).cos() - (TAU).ln() - ln_bessel_i0(k)
}

/// Maps an angle into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `count * log_a`, with 0 * -inf taken as 0.
pub fn penalty_term(count: usize, log_a: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * log_a
    }
}

/// Type-7 empirical quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(2.0) - 2.279_585_302_336_067_3).abs() < 1e-13);
        let r = bessel_i0(10.0) / 2_815.716_628_466_254;
        assert!((r - 1.0).abs() < 1e-13);
    }

    #[test]
    fn ln_i0_continuous_across_branch() {
        let a = ln_bessel_i0(30.0);
        let b = ln_bessel_i0(30.000_001);
        assert!((a - b).abs() < 1e-5);
        // I0(50) = 2.932553783849336e20
        assert!((ln_bessel_i0(50.0) - 2.932_553_783_849_336e20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn wrap_examples() {
        assert!((wrap_angle(3.5) - (3.5 - TAU)).abs() < 1e-15);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(-3.5) - (TAU - 3.5)).abs() < 1e-15);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
        assert!((quantile(&[0.0, 10.0], 0.9) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(-2.0) - 0.022_750_131_948_179_2).abs() < 1e-15);
    }

    #[test]
    fn penalty_zero_count_with_minus_infinity() {
        assert_eq!(penalty_term(0, f64::NEG_INFINITY), 0.0);
        assert_eq!(penalty_term(3, -2.0), -6.0);
    }
}
