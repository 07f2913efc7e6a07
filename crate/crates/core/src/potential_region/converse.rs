//! Finite-payload converse on the minimum `Eb/N0`.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::quadrature::q_inv;

/// `H_b(p)` in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Both terms of the converse and their maximum, as linear `Eb/N0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConverseBound {
    /// `[Q^{-1}(1/M) - Q^{-1}(1 - eps)]_+^2 / (2 log2 M)`
    pub first: f64,
    /// `(2^{2 mu [log2 M - eps log2(M-1) - H_b(eps)]} - 1) / (2 mu log2 M)`
    pub second: f64,
    pub value: f64,
}

/// Converse for `log2 M = payload_bits` bits per user at density `mu` and
/// target error `eps`.
pub fn converse_min_ebn0(mu: f64, payload_bits: f64, eps: f64) -> Result<ConverseBound> {
    if !(payload_bits >= 1.0) {
        return Err(invalid("payload must be at least one bit"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("target error must lie in (0, 1), got {eps}")));
    }
    if !(mu > 0.0) {
        return Err(invalid("user density must be positive"));
    }
    let inv_m = (-payload_bits).exp2();
    let gap = q_inv(inv_m) - q_inv(1.0 - eps);
    let first = if gap > 0.0 {
        gap * gap / (2.0 * payload_bits)
    } else {
        0.0
    };
    // log2(M - 1) = log2 M + log2(1 - 1/M)
    let log2_m1 = payload_bits + (-inv_m).ln_1p() / std::f64::consts::LN_2;
    let bits = payload_bits - eps * log2_m1 - binary_entropy(eps);
    let second = ((2.0 * mu * bits).exp2() - 1.0) / (2.0 * mu * payload_bits);
    Ok(ConverseBound {
        first,
        second,
        value: first.max(second),
    })
}
