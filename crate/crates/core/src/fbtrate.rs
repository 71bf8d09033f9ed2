//! Finite-blocklength rate terms under the normal approximation.

use libm::erfc;

use crate::error::{Error, Result};

/// `log2(e)`, converts the nat-based dispersion term to bits.
pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const QINV_REL_TOL: f64 = 1e-12;
const QINV_UPPER: f64 = 38.5;

/// Inverse Gaussian tail, `x` such that `Q(x) = eps`.
///
/// Newton steps on `ln Q(x) - ln eps` with a bisection safeguard. The result
/// satisfies `|Q(x) - eps| / eps <= 1e-10` across the representable range.
pub fn q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain {
            what: "error probability",
            value: eps,
        });
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    if eps > 0.5 {
        return Ok(-upper_tail_inv(1.0 - eps));
    }
    Ok(upper_tail_inv(eps))
}

/// Solves `Q(x) = eps` for `0 < eps < 0.5` on `x > 0`.
fn upper_tail_inv(eps: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = QINV_UPPER;
    // Rational starting point, accurate to about 5e-4.
    let t = (-2.0 * eps.ln()).sqrt();
    let mut x = t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
        / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    let target = eps.ln();
    for _ in 0..200 {
        let q = q_function(x);
        if (q - eps).abs() <= QINV_REL_TOL * eps {
            return x;
        }
        if q > eps {
            lo = x;
        } else {
            hi = x;
        }
        let h = q.ln() - target;
        let slope = -std_normal_pdf(x) / q;
        let newton = x - h / slope;
        x = if h.is_finite() && slope.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    x
}

/// Channel dispersion `1 - (1 + gamma)^-2`.
pub fn dispersion(gamma: f64) -> f64 {
    if gamma > 1.0 {
        let inv = 1.0 / (1.0 + gamma);
        1.0 - inv * inv
    } else {
        let one_plus = 1.0 + gamma;
        gamma * (2.0 + gamma) / (one_plus * one_plus)
    }
}

/// Derivative of [`dispersion`] with respect to the SNR.
pub fn dispersion_slope(gamma: f64) -> f64 {
    2.0 / (1.0 + gamma).powi(3)
}

/// Shannon term, dispersion penalty and their difference, all in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerms {
    pub c_bits: f64,
    pub v_bits: f64,
    pub psi_bits: f64,
}

impl RateTerms {
    /// Rate terms for resources with SNRs `snrs` and weights `weights`
    /// (indicator values), given the precomputed `Q^-1(eps)`.
    pub fn weighted(snrs: &[f64], weights: &[f64], q_inv_eps: f64) -> Self {
        debug_assert_eq!(snrs.len(), weights.len());
        let mut c = 0.0;
        let mut v = 0.0;
        for (&g, &s) in snrs.iter().zip(weights) {
            c += s * g.ln_1p() * LOG2_E;
            v += s * dispersion(g);
        }
        Self::from_sums(c, v, q_inv_eps)
    }

    pub fn unweighted(snrs: &[f64], q_inv_eps: f64) -> Self {
        let c = snrs.iter().map(|g| g.ln_1p()).sum::<f64>() * LOG2_E;
        let v = snrs.iter().map(|&g| dispersion(g)).sum::<f64>();
        Self::from_sums(c, v, q_inv_eps)
    }

    /// From `sum log2(1+gamma)` and `sum V`.
    pub fn from_sums(c_bits: f64, dispersion_sum: f64, q_inv_eps: f64) -> Self {
        let v_bits = LOG2_E * q_inv_eps * dispersion_sum.max(0.0).sqrt();
        RateTerms {
            c_bits,
            v_bits,
            psi_bits: c_bits - v_bits,
        }
    }
}

/// Rate terms of a single code block spanning resources with SNRs `snrs`.
pub fn rate_terms(snrs: &[f64], eps: f64) -> Result<RateTerms> {
    Ok(RateTerms::unweighted(snrs, q_inv(eps)?))
}

/// Normal-approximation bit count `sum log2(1+gamma) - a Q^-1(eps) sqrt(sum V)`.
/// Returned unclamped; it is negative when the dispersion term dominates.
pub fn psi(snrs: &[f64], eps: f64) -> Result<f64> {
    rate_terms(snrs, eps).map(|t| t.psi_bits)
}
