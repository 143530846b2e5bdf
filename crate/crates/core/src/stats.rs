//! Descriptive statistics, Kolmogorov-Smirnov and regression helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::math::CompensatedSum;

/// A Monte Carlo mean with its CLT standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (mean, var) = mean_var(xs);
        let stderr = if xs.len() > 1 { (var / xs.len() as f64).sqrt() } else { 0.0 };
        Estimate { mean, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { mean: value, stderr: 0.0 }
    }

    /// `(mean - target) / stderr`, zero when both numerator and stderr vanish.
    pub fn z_against(&self, target: f64) -> f64 {
        ratio_z(self.mean - target, self.stderr)
    }
}

/// Signed z-score `diff / se` with the degenerate cases pinned:
/// `0/0 -> 0`, `x/0 -> +-1e12`.
pub fn ratio_z(diff: f64, se: f64) -> f64 {
    if se > 0.0 && se.is_finite() {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * 1e12
    }
}

/// Mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|&x| (x - mean) * (x - mean)).collect::<CompensatedSum>().value();
    (mean, ss / (n - 1) as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    mean_var(xs).0
}

/// Upper standard-normal quantile: `P(N > z) = alpha`.
pub fn upper_normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha)
}

/// One-sided tail `P(N > z)`.
pub fn upper_normal_tail(z: f64) -> f64 {
    1.0 - Normal::standard().cdf(z)
}

/// Empirical quantile with linear interpolation on a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Asymptotic Kolmogorov survival function `Q(t) = 2 sum (-1)^{k-1} exp(-2 k^2 t^2)`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        sum += sign * term;
        if term < 1e-18 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test. Ties are handled by stepping over
/// equal values in both samples at once, which keeps the test conservative
/// for discrete laws.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let a = sorted_copy(a);
    let b = sorted_copy(b);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = a[i].min(b[j]);
        while i < na && a[i] <= v {
            i += 1;
        }
        while j < nb && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sq = ne.sqrt();
    let p = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
    KsResult { statistic: d, p_value: p }
}

/// Ordinary least squares fit of `y = a + b x` with classical and
/// heteroskedasticity-robust (HC0) standard errors of the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub slope_stderr_robust: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| b - intercept - slope * a).collect();
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let slope_stderr = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    let meat: f64 = x.iter().zip(&resid).map(|(&a, &r)| (a - mx) * (a - mx) * r * r).sum();
    let slope_stderr_robust = (meat / (sxx * sxx)).sqrt();
    LinearFit { intercept, slope, slope_stderr, slope_stderr_robust }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantiles() {
        assert!((upper_normal_quantile(0.025) - 1.959963984540054).abs() < 1e-9);
        assert!((upper_normal_quantile(upper_normal_tail(3.0)) - 3.0).abs() < 1e-7);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..100).map(f64::from).collect();
        let r = ks_two_sample(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.99);
        let b: Vec<f64> = (200..300).map(f64::from).collect();
        let r = ks_two_sample(&a, &b);
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn ks_ties_do_not_inflate_statistic() {
        let a = vec![1.0; 50];
        let b = vec![1.0; 70];
        assert_eq!(ks_two_sample(&a, &b).statistic, 0.0);
    }

    #[test]
    fn ols_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = ols(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.0);
        assert_eq!(quantile_sorted(&s, 0.125), 0.5);
    }
}
