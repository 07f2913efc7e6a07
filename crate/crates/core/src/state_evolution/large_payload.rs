//! Closed-form thresholds for the flat prior at large section sizes.
//!
//! Section sizes enter only through `log2 B`, so `B = 2^80` or larger is
//! handled without forming `B`.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{domain, Result};

/// `S_AMP = (1/2)(1/ln 2 - 1/(Eb/N0))`; may be negative.
pub fn s_amp(ebn0: f64) -> f64 {
    0.5 * (1.0 / LN_2 - 1.0 / ebn0)
}

/// Positive solution of `S = (1/2) log2(1 + 2 S Eb/N0)`, or `None` when
/// `Eb/N0 <= ln 2` (only `S = 0` solves it then).
pub fn s_opt(ebn0: f64, tol: f64) -> Option<f64> {
    if !(ebn0 > LN_2) || !ebn0.is_finite() {
        return None;
    }
    let g = |s: f64| 0.5 * (2.0 * s * ebn0).ln_1p() / LN_2 - s;
    // g is concave with g(0) = 0 and g'(0) > 0; find a point where g < 0
    let mut hi = 1.0;
    while g(hi) >= 0.0 {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while g(lo) < 0.0 {
        lo /= 2.0;
    }
    while hi - lo > tol.max(f64::EPSILON) * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Spatially coupled design quantities at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LargePayloadThresholds {
    pub theta: f64,
    /// `(2 Eb/N0) mu log2 B`
    pub snr: f64,
    /// `mu log2 B`
    pub spectral_efficiency: f64,
    pub s_amp: f64,
    /// 0 when no positive solution exists.
    pub s_opt: f64,
    pub delta: f64,
    /// `+inf` when `delta <= 0`.
    pub omega_star: f64,
    pub rho_star: f64,
    /// `S_AMP/theta <= mu log2 B < S_opt/theta`
    pub in_window: bool,
    /// `delta > 0`
    pub feasible: bool,
}

impl LargePayloadThresholds {
    /// Quantities for a base matrix with rate-loss factor `theta`.
    pub fn at_theta(mu: f64, log2_b: f64, ebn0: f64, theta: f64) -> Result<Self> {
        if !(mu > 0.0 && log2_b > 0.0 && ebn0 > 0.0 && theta >= 1.0) {
            return Err(domain(format!(
                "need mu, log2 B, Eb/N0 > 0 and theta >= 1; got {mu}, {log2_b}, {ebn0}, {theta}"
            )));
        }
        let s = mu * log2_b;
        let snr = 2.0 * ebn0 * s;
        let delta = (theta * snr).ln_1p() / (2.0 * theta) - mu * log2_b * LN_2;
        let feasible = delta > 0.0;
        let omega_star = if feasible {
            theta * snr * snr / (1.0 + theta * snr) / delta
        } else {
            f64::INFINITY
        };
        let rho_star = if feasible {
            (delta / (3.0 * snr)).min(0.5)
        } else {
            0.0
        };
        let sa = s_amp(ebn0);
        let so = s_opt(ebn0, 1e-14).unwrap_or(0.0);
        Ok(Self {
            theta,
            snr,
            spectral_efficiency: s,
            s_amp: sa,
            s_opt: so,
            delta,
            omega_star,
            rho_star,
            in_window: sa / theta <= s && s < so / theta,
            feasible,
        })
    }

    /// Quantities for an `(omega, lambda)` base matrix.
    pub fn new(mu: f64, log2_b: f64, ebn0: f64, omega: usize, lambda: usize) -> Result<Self> {
        if omega < 1 || lambda < 1 {
            return Err(domain("omega and lambda must be at least 1"));
        }
        Self::at_theta(mu, log2_b, ebn0, 1.0 + (omega - 1) as f64 / lambda as f64)
    }

    /// Upper end of the admissible `delta` range, `min(Delta/(2 mu ln B), 1/2)`.
    pub fn delta_limit(&self, mu: f64, log2_b: f64) -> f64 {
        (self.delta / (2.0 * mu * log2_b * LN_2)).min(0.5)
    }

    /// Ceiling on the number of iterations for the decoding wave to cover
    /// all columns, `ceil(lambda omega* / (2 omega))`.
    pub fn wave_iterations(&self, omega: usize, lambda: usize) -> f64 {
        (lambda as f64 * self.omega_star / (2.0 * omega as f64)).ceil()
    }
}

/// Outcome of the parameter-choice procedure for spectral efficiency `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "recommendation", rename_all = "snake_case")]
pub enum ParameterChoice {
    /// `S < S_AMP`: i.i.d. codebooks suffice.
    IidSufficient,
    Coupled {
        omega: usize,
        lambda: usize,
        /// `S_opt / S`
        theta0: f64,
        /// rate-loss target actually used, strictly between 1 and `theta0`
        theta1: f64,
        omega_star: f64,
    },
    /// `S >= S_opt`
    Infeasible,
}

/// Choose `(omega, lambda)` for spectral efficiency `s` at `Eb/N0`.
///
/// With `theta0 = S_opt / S` exactly, `Delta(theta0) = 0` and `omega*` is
/// unbounded, so the width is chosen against `theta1 = 1 + (theta0 - 1)/2`
/// and the length so that the realized `theta <= theta1`.
pub fn parameter_choice(s: f64, ebn0: f64) -> Result<ParameterChoice> {
    if !(s > 0.0 && ebn0 > 0.0) {
        return Err(domain("spectral efficiency and Eb/N0 must be positive"));
    }
    if s < s_amp(ebn0) {
        return Ok(ParameterChoice::IidSufficient);
    }
    let Some(so) = s_opt(ebn0, 1e-14) else {
        return Ok(ParameterChoice::Infeasible);
    };
    if s >= so {
        return Ok(ParameterChoice::Infeasible);
    }
    let theta0 = so / s;
    let theta1 = 1.0 + 0.5 * (theta0 - 1.0);
    // only S = mu log2 B matters; pass it as mu with log2 B = 1
    let t = LargePayloadThresholds::at_theta(s, 1.0, ebn0, theta1)?;
    let omega = t.omega_star.floor() as usize + 1;
    let lambda = (((omega - 1) as f64 / (theta1 - 1.0)).ceil() as usize)
        .max(2 * omega - 1)
        .max(1);
    Ok(ParameterChoice::Coupled {
        omega,
        lambda,
        theta0,
        theta1,
        omega_star: t.omega_star,
    })
}

/// `B^{-k delta^2} / (delta sqrt(ln B))`
pub fn f_bound(log2_b: f64, delta: f64, k: f64) -> f64 {
    (-k * delta * delta * log2_b).exp2() / (delta * (log2_b * LN_2).sqrt())
}

/// `B^{-k1 delta_tilde^2}`
pub fn g_bound(log2_b: f64, delta_tilde: f64, k1: f64) -> f64 {
    (-k1 * delta_tilde * delta_tilde * log2_b).exp2()
}

/// `B^{-delta2^2/2} / (delta2 sqrt(ln B)) + B^{-delta2^2}`
pub fn h_bound(log2_b: f64, delta2: f64) -> f64 {
    let d2 = delta2 * delta2;
    (-0.5 * d2 * log2_b).exp2() / (delta2 * (log2_b * LN_2).sqrt()) + (-d2 * log2_b).exp2()
}

/// Midpoint of the admissible interval `(0, sqrt 2 - sqrt(2 - delta_tilde))`.
pub fn default_delta2(delta_tilde: f64) -> f64 {
    0.5 * (2f64.sqrt() - (2.0 - delta_tilde).sqrt())
}

/// Phase of the i.i.d. decoder after one iteration at large payloads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum IidPhase {
    /// UER at most `uer_bound = 4 f_{B,delta}`.
    BelowThreshold { uer_bound: f64 },
    /// UER at least `uer_lower = 1 - h_{B,delta2}`.
    AboveThreshold { uer_lower: f64 },
    Indeterminate,
}

/// Constants of the large-payload phase test; `k`, `k1` are unspecified
/// positive constants and the resulting bounds are diagnostic only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConstants {
    pub delta: f64,
    pub delta_tilde: f64,
    /// `None` uses [`default_delta2`].
    pub delta2: Option<f64>,
    pub k: f64,
    pub k1: f64,
}

impl Default for PhaseConstants {
    fn default() -> Self {
        Self {
            delta: 0.1,
            delta_tilde: 0.1,
            delta2: None,
            k: 1.0,
            k1: 1.0,
        }
    }
}

pub fn iid_phase(mu: f64, log2_b: f64, ebn0: f64, c: &PhaseConstants) -> Result<IidPhase> {
    if !(c.delta > 0.0 && c.delta < 0.5) {
        return Err(domain(format!("delta must lie in (0, 1/2), got {}", c.delta)));
    }
    if !(c.delta_tilde > 0.0 && c.delta_tilde < 1.0) {
        return Err(domain(format!("delta_tilde must lie in (0, 1), got {}", c.delta_tilde)));
    }
    if !(c.k > 0.0 && c.k1 > 0.0) {
        return Err(domain("k and k1 must be positive"));
    }
    let d2_max = 2f64.sqrt() - (2.0 - c.delta_tilde).sqrt();
    let delta2 = c.delta2.unwrap_or_else(|| default_delta2(c.delta_tilde));
    if !(delta2 > 0.0 && delta2 < d2_max) {
        return Err(domain(format!("delta2 must lie in (0, {d2_max}), got {delta2}")));
    }
    if !(mu > 0.0 && log2_b > 0.0 && ebn0 > 0.0) {
        return Err(domain("mu, log2 B and Eb/N0 must be positive"));
    }
    let s = mu * log2_b;
    let low = 0.5 * (1.0 / ((1.0 + 0.5 * c.delta) * LN_2) - 1.0 / ebn0);
    if s < low {
        return Ok(IidPhase::BelowThreshold {
            uer_bound: 4.0 * f_bound(log2_b, c.delta, c.k),
        });
    }
    let g = g_bound(log2_b, c.delta_tilde, c.k1);
    let high = (1.0 / ((1.0 - 0.5 * c.delta_tilde) * LN_2) - 1.0 / ebn0) / (2.0 * (1.0 - g));
    if s > high {
        return Ok(IidPhase::AboveThreshold {
            uer_lower: 1.0 - h_bound(log2_b, delta2),
        });
    }
    Ok(IidPhase::Indeterminate)
}
