//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! All three use upward recurrence until the argument reaches
//! [`ASYMPTOTIC_CUTOFF`] and then the Stirling / Bernoulli asymptotic series.

use thiserror::Error;

const ASYMPTOTIC_CUTOFF: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("special function `{function}` requires x > 0, got {x}")]
pub struct DomainError {
    pub function: &'static str,
    pub x: f64,
}

fn check(function: &'static str, x: f64) -> Result<(), DomainError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(DomainError { function, x })
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, DomainError> {
    check("ln_gamma", x)?;
    Ok(ln_gamma_pos(x))
}

/// `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64, DomainError> {
    check("digamma", x)?;
    Ok(digamma_pos(x))
}

/// `ψ'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64, DomainError> {
    check("trigamma", x)?;
    Ok(trigamma_pos(x))
}

pub(crate) fn ln_gamma_pos(x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut z = x;
    let mut log_prod = 0.0;
    if z < ASYMPTOTIC_CUTOFF {
        let mut prod = 1.0;
        while z < ASYMPTOTIC_CUTOFF {
            prod *= z;
            z += 1.0;
        }
        log_prod = prod.ln();
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/(12z) - 1/(360z^3) + 1/(1260z^5) - 1/(1680z^7) + 1/(1188z^9) - 691/(360360z^11) + 1/(156z^13)
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2
                                        * (1.0 / 1188.0
                                            - inv2 * (691.0 / 360_360.0 - inv2 / 156.0))))));
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series - log_prod
}

pub(crate) fn digamma_pos(x: f64) -> f64 {
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_CUTOFF {
        shift -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/(12z^2) - 1/(120z^4) + 1/(252z^6) - 1/(240z^8) + 1/(132z^10) - 691/(32760z^12) + 1/(12z^14)
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    shift + z.ln() - 0.5 * inv - series
}

pub(crate) fn trigamma_pos(x: f64) -> f64 {
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_CUTOFF {
        shift += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/z + 1/(2z^2) + 1/(6z^3) - 1/(30z^5) + 1/(42z^7) - 1/(30z^9) + 5/(66z^11) - 691/(2730z^13) + 7/(6z^15)
    let tail = inv
        * inv2
        * (1.0 / 6.0
            - inv2
                * (1.0 / 30.0
                    - inv2
                        * (1.0 / 42.0
                            - inv2
                                * (1.0 / 30.0
                                    - inv2
                                        * (5.0 / 66.0
                                            - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    shift + inv + 0.5 * inv2 + tail
}
