//! Small statistical helpers shared by the fitting and policy modules.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper `alpha` critical value of the χ² distribution with `df` degrees of freedom.
pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    assert!(df > 0, "chi-square test needs at least one degree of freedom");
    assert!(alpha > 0.0 && alpha < 1.0, "significance level must lie in (0,1)");
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

/// Upper tail probability of a χ² statistic.
pub fn chi2_p_value(statistic: f64, df: usize) -> f64 {
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(statistic.max(0.0))
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len().saturating_sub(1).max(1)) as f64).sqrt()
}
