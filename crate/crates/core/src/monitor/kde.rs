//! Gaussian kernel density estimates and the control limits taken from them.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Training values below which the upper tail is poorly estimated.
pub const MIN_STABLE_VALUES: usize = 50;

/// Gaussian KDE `f̂_h(x) = (1/Nh) Σ φ((x − e_i)/h)`.
pub fn kde_pdf(values: &[f64], h: f64, x: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let sum: f64 = values
        .iter()
        .map(|&e| {
            let u = (x - e) / h;
            (-0.5 * u * u).exp()
        })
        .sum();
    sum * INV_SQRT_2PI / (values.len() as f64 * h)
}

/// KDE distribution function `(1/N) Σ Φ((x − e_i)/h)`.
pub fn kde_cdf(values: &[f64], h: f64, x: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let sum: f64 = values
        .iter()
        .map(|&e| 0.5 * erfc(-(x - e) / (h * std::f64::consts::SQRT_2)))
        .sum();
    sum / values.len() as f64
}

/// Silverman's rule `1.06 σ̂ N^(-1/5)` with `σ̂ = min(sd, IQR/1.349)`,
/// falling back to the standard deviation when the IQR is zero.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("all statistic values are identical".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let robust = iqr / 1.349;
    let sigma = if robust > 0.0 { sd.min(robust) } else { sd };
    Ok(1.06 * sigma * (n as f64).powf(-0.2))
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Control limit at confidence `alpha` for one detection statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeLimit {
    /// Sorted training values of the statistic.
    pub training_values: Vec<f64>,
    pub bandwidth: f64,
    pub alpha: f64,
    pub cl: f64,
}

impl KdeLimit {
    pub fn pdf(&self, x: f64) -> f64 {
        kde_pdf(&self.training_values, self.bandwidth, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        kde_cdf(&self.training_values, self.bandwidth, x)
    }

    /// Fraction of training values at or below the limit.
    pub fn coverage(&self) -> f64 {
        let below = self.training_values.partition_point(|&v| v <= self.cl);
        below as f64 / self.training_values.len() as f64
    }
}

/// Fits the KDE with Silverman's bandwidth and places the limit where its
/// distribution function reaches `alpha`, found by bisection on the exact
/// kernel CDF to a relative width of 1e-12.
pub fn fit_limit(values: &[f64], alpha: f64) -> Result<KdeLimit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("statistic value {v} is not finite")));
    }
    if values.len() < MIN_STABLE_VALUES {
        log::warn!(
            "control limit from only {} values; at least {MIN_STABLE_VALUES} recommended",
            values.len()
        );
    }
    let h = silverman_bandwidth(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut lo = sorted[0] - 10.0 * h;
    let mut hi = sorted[sorted.len() - 1] + 10.0 * h;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kde_cdf(&sorted, h, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(h) {
            break;
        }
    }
    Ok(KdeLimit {
        training_values: sorted,
        bandwidth: h,
        alpha,
        cl: hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_density_is_the_kernel_peak() {
        assert!((kde_pdf(&[0.0], 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn symmetric_data_gives_symmetric_density() {
        let v = [-1.0, 1.0];
        for x in [0.3, 1.7, 4.0] {
            assert!((kde_pdf(&v, 0.7, x) - kde_pdf(&v, 0.7, -x)).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_is_the_integral_of_the_pdf() {
        let v = [0.0, 0.5, 2.0, 2.1];
        let h = 0.4;
        let n = 20_000;
        let (a, b) = (-6.0, 1.0);
        let step = (b - a) / n as f64;
        let mut acc = 0.5 * (kde_pdf(&v, h, a) + kde_pdf(&v, h, b));
        for i in 1..n {
            acc += kde_pdf(&v, h, a + i as f64 * step);
        }
        assert!((acc * step - kde_cdf(&v, h, b)).abs() < 1e-8);
    }

    #[test]
    fn identical_values_are_degenerate() {
        assert!(matches!(fit_limit(&[2.0; 60], 0.95), Err(Error::Degenerate(_))));
    }

    #[test]
    fn limit_is_monotone_in_alpha() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let a = fit_limit(&v, 0.95).unwrap();
        let b = fit_limit(&v, 0.99).unwrap();
        assert!(b.cl > a.cl);
        assert!((a.cdf(a.cl) - 0.95).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_alpha() {
        let v: Vec<f64> = (0..60).map(f64::from).collect();
        assert!(fit_limit(&v, 1.0).is_err());
        assert!(fit_limit(&v, 0.0).is_err());
    }
}
