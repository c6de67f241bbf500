//! Uniformity checks for PIT values and anomaly scores.

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use alloc::vec::Vec;


use crate::math;
use crate::{Error, Result};

/// One-sample Kolmogorov–Smirnov test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsTest {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// KS statistic and asymptotic p-value of `values` against `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> Result<KsTest> {
    if values.is_empty() {
        return Err(Error::Empty("sample"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sample"));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(math::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsTest { statistic: d, p_value: kolmogorov_sf(d, sorted.len()), n: sorted.len() })
}

/// KS test against the uniform distribution on (0, 1).
pub fn ks_uniform(values: &[f64]) -> Result<KsTest> {
    ks_test(values, |v| v.clamp(0.0, 1.0))
}

/// Asymptotic survival function of the KS statistic with Stephens'
/// finite-sample correction.
pub fn kolmogorov_sf(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * t * t).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::InsufficientData { len: values.len(), needed: 3 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var == 0.0 {
        return Err(crate::error::invalid("constant series"));
    }
    let cov: f64 = values.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    Ok(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_grid_passes() {
        let u: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let ks = ks_uniform(&u).unwrap();
        assert!(ks.statistic <= 0.0005 + 1e-12);
        assert!(ks.passes(0.01));
    }

    #[test]
    fn skewed_sample_fails() {
        let u: Vec<f64> = (0..1000).map(|i| ((i as f64 + 0.5) / 1000.0).powi(2)).collect();
        assert!(!ks_uniform(&u).unwrap().passes(0.01));
    }

    #[test]
    fn critical_value_matches_table() {
        // Asymptotic 1% critical value is 1.6276 / sqrt(n).
        let n = 10_000;
        let p = kolmogorov_sf(1.6276 / 100.0, n);
        assert!((p - 0.01).abs() < 1e-3, "{p}");
    }
}
