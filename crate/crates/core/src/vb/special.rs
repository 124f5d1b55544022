//! Digamma and log-gamma helpers for the Beta/Gamma expectations.

use crate::error::{Error, Result};

/// Below this argument the digamma recurrence shifts upward before the
/// asymptotic series is applied.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// Digamma function for positive arguments; NaN otherwise.
///
/// Shifts `x` upward with `psi(x) = psi(x + 1) - 1/x` until `x >= 10`, then
/// applies the Bernoulli-number asymptotic expansion through `x^-14`.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // B_{2n} / (2n) for n = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + x.ln() - 0.5 * inv - series
}

/// [`digamma`] that reports a non-positive argument as an invariant error.
pub fn checked_digamma(x: f64, what: &str) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(digamma(x))
    } else {
        Err(Error::Invariant(format!(
            "digamma argument for {what} must be positive and finite, got {x}"
        )))
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}
