//! Gaussian CDF and truncated moments, closed form via erf.

use super::ModelError;
use std::f64::consts::PI;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedMoments {
    /// P(a <= X <= b)
    pub mass: f64,
    /// E[X · 1(a <= X <= b)]
    pub moment: f64,
}

/// Probability mass and first moment of N(mu, sigma^2) restricted to [a, b].
pub fn truncated_mass(mu: f64, sigma: f64, a: f64, b: f64) -> Result<TruncatedMoments, ModelError> {
    if sigma <= 0.0 {
        return Err(ModelError::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if a > b {
        return Err(ModelError::Invalid(format!("empty interval: {a} > {b}")));
    }
    let alpha = (a - mu) / sigma;
    let beta = (b - mu) / sigma;
    let mass = normal_cdf(beta) - normal_cdf(alpha);
    let moment = mu * mass - sigma * (normal_pdf(beta) - normal_pdf(alpha));
    Ok(TruncatedMoments { mass, moment })
}
