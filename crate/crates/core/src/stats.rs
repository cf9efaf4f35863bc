//! Descriptive statistics shared by the Monte Carlo and Sobol code.

use statrs::distribution::{ContinuousCDF, Normal};

/// Inverse standard normal CDF. `p` must lie strictly inside (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with `ddof` degrees of freedom removed.
pub fn variance(x: &[f64], ddof: usize) -> f64 {
    if x.len() <= ddof {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - ddof) as f64
}

pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64
}

/// Linear-interpolation percentile (`q` in [0, 1]) of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_symmetry_and_median() {
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.1) + normal_quantile(0.9)).abs() < 1e-14);
    }

    #[test]
    fn percentile_interpolates() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&x, 0.5), 3.0);
        assert_eq!(percentile_sorted(&x, 0.125), 1.5);
        assert_eq!(percentile_sorted(&x, 1.0), 5.0);
    }

    #[test]
    fn variance_and_covariance() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(variance(&x, 0), 1.25);
        assert!((variance(&x, 1) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(covariance(&x, &x), 1.25);
    }
}
