//! Section distributions and the scalar functionals of the single-section
//! Gaussian channel `S = X_sec + sqrt(tau) Z`.
//!
//! A section is a length-`B` vector with exactly one nonzero entry of
//! magnitude `sqrt(E)`. The [`PriorKind::Flat`] law puts `+sqrt(E)` at a
//! uniformly chosen location; [`PriorKind::BinaryModulated`] additionally
//! draws the sign uniformly, carrying one more bit.
//!
//! Every functional depends on `(E, tau)` only through the ratio `E / tau`,
//! which this module calls the section SNR.

mod channel;

pub use channel::{ChannelSettings, MmseTable, ScalarChannel};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::quadrature::{self, ln_phi_cdf, log_sum_exp, normal_rule_200, q_func, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Flat,
    BinaryModulated,
}

/// Per-section message distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPrior {
    kind: PriorKind,
    b: usize,
    energy: f64,
}

/// Effective Gaussian noise variance of the single-section channel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EffectiveNoise(f64);

impl EffectiveNoise {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && !tau.is_nan() {
            Ok(Self(tau))
        } else {
            Err(domain(format!("effective noise variance must be positive, got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl SectionPrior {
    pub fn new(kind: PriorKind, b: usize, energy: f64) -> Result<Self> {
        if b == 0 || !b.is_power_of_two() {
            return Err(invalid(format!("section length B must be a power of two, got {b}")));
        }
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(invalid(format!("section energy must be positive, got {energy}")));
        }
        Ok(Self { kind, b, energy })
    }

    pub fn flat(b: usize, energy: f64) -> Result<Self> {
        Self::new(PriorKind::Flat, b, energy)
    }

    pub fn binary_modulated(b: usize, energy: f64) -> Result<Self> {
        Self::new(PriorKind::BinaryModulated, b, energy)
    }

    /// Prior whose energy is set from the energy per information bit:
    /// `E = E_b * payload_bits`.
    pub fn from_energy_per_bit(kind: PriorKind, b: usize, eb: f64) -> Result<Self> {
        let bits = payload_bits_of(kind, b);
        Self::new(kind, b, eb * bits.max(f64::MIN_POSITIVE))
    }

    pub fn with_energy(&self, energy: f64) -> Result<Self> {
        Self::new(self.kind, self.b, energy)
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    /// Section length `B`.
    pub fn section_len(&self) -> usize {
        self.b
    }

    /// Section energy `E`.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn amplitude(&self) -> f64 {
        self.energy.sqrt()
    }

    /// Bits carried by one section: `log2 B`, plus one sign bit when modulated.
    pub fn payload_bits(&self) -> f64 {
        payload_bits_of(self.kind, self.b)
    }

    /// Number of support points of the section law.
    pub fn support_size(&self) -> usize {
        match self.kind {
            PriorKind::Flat => self.b,
            PriorKind::BinaryModulated => 2 * self.b,
        }
    }

    /// Second moment of the section mean, `||E X_sec||^2`; the MMSE with no
    /// observation is `E - ||E X_sec||^2`.
    pub fn mean_energy(&self) -> f64 {
        match self.kind {
            PriorKind::Flat => self.energy / self.b as f64,
            PriorKind::BinaryModulated => 0.0,
        }
    }

    /// Draw one section.
    pub fn sample_section<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.b];
        self.sample_into(rng, &mut out);
        out
    }

    /// Draw one section into `out` (length `B`), overwriting it.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.b);
        out.iter_mut().for_each(|v| *v = 0.0);
        let loc = rng.random_range(0..self.b);
        let sign = match self.kind {
            PriorKind::Flat => 1.0,
            PriorKind::BinaryModulated => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        out[loc] = sign * self.amplitude();
    }

    /// Posterior mean of the section given `s = X_sec + sqrt(tau) Z`.
    pub fn denoise(&self, s: &[f64], tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; s.len()];
        self.denoise_into(s, tau, &mut out);
        out
    }

    /// In-place variant of [`denoise`](Self::denoise); `s` and `out` have length `B`.
    pub fn denoise_into(&self, s: &[f64], tau: f64, out: &mut [f64]) {
        let a = self.amplitude();
        let scale = a / tau;
        match self.kind {
            PriorKind::Flat => {
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (o, &v) in out.iter_mut().zip(s) {
                    let e = ((v - m) * scale).exp();
                    *o = e;
                    z += e;
                }
                let k = a / z;
                out.iter_mut().for_each(|o| *o *= k);
            }
            PriorKind::BinaryModulated => {
                // x_j = sqrt(E) sinh(u_j) / sum_i cosh(u_i), u = s sqrt(E)/tau
                let m = s.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())) * scale;
                let mut z = 0.0;
                for (o, &v) in out.iter_mut().zip(s) {
                    let u = v * scale;
                    let ep = (u - m).exp();
                    let en = (-u - m).exp();
                    *o = ep - en;
                    z += ep + en;
                }
                let k = a / z;
                out.iter_mut().for_each(|o| *o *= k);
            }
        }
    }

    /// MAP section estimate from `s`. Ties go to the lowest index; a zero
    /// statistic under binary modulation decides `+`.
    pub fn hard_decision(&self, s: &[f64], tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; s.len()];
        self.hard_decision_into(s, tau, &mut out);
        out
    }

    /// In-place variant of [`hard_decision`](Self::hard_decision). The
    /// decision does not depend on `tau` for either kind (all support
    /// points have equal energy and prior mass).
    pub fn hard_decision_into(&self, s: &[f64], _tau: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let a = self.amplitude();
        match self.kind {
            PriorKind::Flat => {
                let j = argmax_first(s.iter().copied());
                out[j] = a;
            }
            PriorKind::BinaryModulated => {
                let j = argmax_first(s.iter().map(|v| v.abs()));
                out[j] = if s[j] < 0.0 { -a } else { a };
            }
        }
    }

    /// Error probability of the MAP decision on the single-section channel.
    pub fn pe(&self, tau: f64) -> Result<f64> {
        let tau = EffectiveNoise::new(tau)?.get();
        Ok(self.pe_at_snr(self.energy / tau))
    }

    /// [`pe`](Self::pe) as a function of the section SNR `E/tau`.
    pub fn pe_at_snr(&self, snr: f64) -> f64 {
        let a = snr.sqrt();
        let bm1 = (self.b - 1) as f64;
        let p = match self.kind {
            PriorKind::Flat => {
                if self.b == 1 {
                    return 0.0;
                }
                // 1 - E[Phi(a + Z)^(B-1)], with the power taken in the log domain
                normal_rule_200().expect(|z| -(bm1 * ln_phi_cdf(a + z)).exp_m1())
            }
            PriorKind::BinaryModulated => {
                // error unless a + Z > 0 and |Z_j| < a + Z for every j >= 2
                let tail = quadrature::normal_expect_on(
                    |z| {
                        if self.b == 1 {
                            0.0
                        } else {
                            -(bm1 * (-2.0 * q_func(a + z)).ln_1p()).exp_m1()
                        }
                    },
                    -a,
                    f64::INFINITY,
                    256,
                );
                q_func(a) + tail
            }
        };
        p.clamp(0.0, 1.0)
    }

    /// Monte Carlo estimate of `mmse(1/tau)` from `samples` draws of `Z`.
    pub fn mmse_mc(&self, inv_tau: f64, samples: usize, seed: u64) -> Result<McEstimate> {
        if !(inv_tau > 0.0) {
            return Err(domain(format!("inverse noise variance must be positive, got {inv_tau}")));
        }
        let snr = self.energy * inv_tau;
        let est = mc_mean(self.b, self.b, samples, seed, |z, buf| {
            self.normalized_sq_error_sample(snr, z, buf)
        });
        Ok(McEstimate {
            mean: est.mean * self.energy,
            std_err: est.std_err * self.energy,
            samples,
        })
    }

    /// Monte Carlo estimate of `I(X_sec; S_tau)` in nats.
    pub fn mutual_info_mc(&self, tau: f64, samples: usize, seed: u64) -> Result<McEstimate> {
        let tau = EffectiveNoise::new(tau)?.get();
        let snr = self.energy / tau;
        let a = snr.sqrt();
        let ln_b = (self.b as f64).ln();
        let est = match self.kind {
            PriorKind::Flat => mc_mean(self.b, self.b, samples, seed, |z, buf| {
                buf[0] = snr + a * z[0];
                for j in 1..z.len() {
                    buf[j] = a * z[j];
                }
                snr + ln_b - log_sum_exp(&buf[..z.len()])
            }),
            PriorKind::BinaryModulated => mc_mean(self.b, 2 * self.b, samples, seed, |z, buf| {
                // posterior log-probability of the transmitted point
                let b = z.len();
                for j in 0..b {
                    let u = if j == 0 { snr + a * z[0] } else { a * z[j] };
                    buf[2 * j] = u;
                    buf[2 * j + 1] = -u;
                }
                (2.0 * b as f64).ln() + buf[0] - log_sum_exp(&buf[..2 * b])
            }),
        };
        Ok(est)
    }

    /// Squared error of the posterior mean divided by `E`, for one noise draw
    /// `z` (length `B`) with the transmitted point at index 0 (positive sign).
    /// Its expectation is `mmse / E`.
    pub(crate) fn normalized_sq_error_sample(&self, snr: f64, z: &[f64], buf: &mut [f64]) -> f64 {
        let a = snr.sqrt();
        match self.kind {
            PriorKind::Flat => {
                if z.len() == 1 {
                    return 0.0;
                }
                for j in 1..z.len() {
                    buf[j - 1] = a * z[j];
                }
                let rest = log_sum_exp(&buf[..z.len() - 1]);
                sigmoid(rest - snr - a * z[0])
            }
            PriorKind::BinaryModulated => {
                let u0 = snr + a * z[0];
                let m = z[1..]
                    .iter()
                    .fold(u0.abs(), |acc, v| acc.max((a * v).abs()));
                let mut others = 2.0 * (-u0 - m).exp();
                let mut den = (u0 - m).exp() + (-u0 - m).exp();
                for &v in &z[1..] {
                    let u = a * v;
                    let c = (u - m).exp() + (-u - m).exp();
                    others += c;
                    den += c;
                }
                others / den
            }
        }
    }
}

fn payload_bits_of(kind: PriorKind, b: usize) -> f64 {
    let base = (b as f64).log2();
    match kind {
        PriorKind::Flat => base,
        PriorKind::BinaryModulated => base + 1.0,
    }
}

fn argmax_first(it: impl Iterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, v) in it.enumerate() {
        if v > best {
            best = v;
            idx = i;
        }
    }
    idx
}

/// Sample mean and standard error of `f(Z)` for `Z ~ N(0, I_dim)`, drawn from
/// a ChaCha stream; chunk `k` uses stream `k`, so the estimate does not depend
/// on how chunks are scheduled.
fn mc_mean(
    dim: usize,
    buf_len: usize,
    samples: usize,
    seed: u64,
    f: impl Fn(&[f64], &mut [f64]) -> f64 + Sync + Send,
) -> McEstimate {
    const CHUNK: usize = 4096;
    let chunks = samples.div_ceil(CHUNK);
    let partial = crate::par::map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = CHUNK.min(samples - c * CHUNK);
        let mut z = vec![0.0; dim];
        let mut buf = vec![0.0; buf_len];
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let v = f(&z, &mut buf);
            s1 += v;
            s2 += v * v;
        }
        (s1, s2)
    });
    let (s1, s2) = partial
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    McEstimate {
        mean,
        std_err: (var / n).sqrt(),
        samples,
    }
}
