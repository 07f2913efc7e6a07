//! Tabulated MMSE and mutual information of the single-section channel.
//!
//! `mmse(1/tau) / E` is a function of the section SNR `s = E/tau` alone. It is
//! tabulated once per `(kind, B)` on a logarithmic SNR grid, either by exact
//! one-dimensional quadrature (Flat with `B <= 2`, binary modulation with
//! `B = 1`) or by Monte Carlo with common random numbers across grid points,
//! and interpolated with a monotone cubic. The mutual information is the
//! integral of that interpolant, `I(s) = 1/2 int_0^s mmse(u)/E du`, so the
//! two functionals satisfy the I-MMSE relation exactly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{EffectiveNoise, PriorKind, SectionPrior};
use crate::error::{domain, Result};
use crate::quadrature::{gauss_legendre, normal_expect_on, sigmoid};

/// Knobs for building an [`MmseTable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSettings {
    /// Monte Carlo draws per grid point; 0 picks a size-dependent default.
    pub samples: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub snr_min: f64,
    pub snr_max: f64,
}

impl Default for ChannelSettings {
    fn default() -> Self {
        Self {
            samples: 0,
            seed: 0x6d6d_7365,
            grid_points: 160,
            snr_min: 1e-3,
            snr_max: 400.0,
        }
    }
}

impl ChannelSettings {
    pub fn resolved_samples(&self, b: usize) -> usize {
        if self.samples > 0 {
            self.samples
        } else if b <= 16 {
            100_000
        } else {
            (1usize << 22).div_ceil(b).max(20_000)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct TableKey {
    kind: PriorKind,
    b: usize,
    samples: usize,
    seed: u64,
    grid: usize,
    lo: u64,
    hi: u64,
}

/// Normalized MMSE `m(s) = mmse/E` on a log-SNR grid.
#[derive(Debug, Clone)]
pub struct MmseTable {
    kind: PriorKind,
    b: usize,
    /// `ln s_k`
    log_snr: Vec<f64>,
    m: Vec<f64>,
    std_err: Vec<f64>,
    slope: Vec<f64>,
    /// `int_0^{s_k} m(u) du`
    cum: Vec<f64>,
    m_zero: f64,
    exact: bool,
    samples: usize,
}

const TAIL_RATE: f64 = 0.25;

impl MmseTable {
    pub fn build(kind: PriorKind, b: usize, settings: &ChannelSettings) -> Self {
        let k = settings.grid_points.max(8);
        let t0 = settings.snr_min.ln();
        let t1 = settings.snr_max.ln();
        let log_snr: Vec<f64> = (0..k)
            .map(|i| t0 + (t1 - t0) * i as f64 / (k - 1) as f64)
            .collect();
        let snr: Vec<f64> = log_snr.iter().map(|t| t.exp()).collect();
        let m_zero = match kind {
            PriorKind::Flat => 1.0 - 1.0 / b as f64,
            PriorKind::BinaryModulated => 1.0,
        };

        let (mut m, std_err, exact, samples) = match (kind, b) {
            (PriorKind::Flat, 1) => (vec![0.0; k], vec![0.0; k], true, 0),
            (PriorKind::Flat, 2) => {
                let m = crate::par::map_slice(&snr, |&s| {
                    let a = (2.0 * s).sqrt();
                    normal_expect_on(|g| sigmoid(-s + a * g), -12.0, 12.0, 480)
                });
                (m, vec![0.0; k], true, 0)
            }
            (PriorKind::BinaryModulated, 1) => {
                let m = crate::par::map_slice(&snr, |&s| {
                    let a = s.sqrt();
                    normal_expect_on(|z| 2.0 * sigmoid(-2.0 * (s + a * z)), -12.0, 12.0, 480)
                });
                (m, vec![0.0; k], true, 0)
            }
            _ => {
                let n = settings.resolved_samples(b);
                let (m, se) = monte_carlo_grid(kind, b, &snr, n, settings.seed);
                (m, se, false, n)
            }
        };

        // The MMSE is non-increasing in SNR; clip Monte Carlo wiggles.
        let mut run = m_zero;
        for v in m.iter_mut() {
            *v = v.clamp(0.0, 1.0).min(run);
            run = *v;
        }

        let slope = pchip_slopes(&log_snr, &m);
        let mut table = Self {
            kind,
            b,
            log_snr,
            m,
            std_err,
            slope,
            cum: Vec::new(),
            m_zero,
            exact,
            samples,
        };
        table.cum = table.cumulative();
        table
    }

    /// Shared table for `(kind, B, settings)`, built on first use.
    pub fn shared(kind: PriorKind, b: usize, settings: &ChannelSettings) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<MmseTable>>>> = OnceLock::new();
        let key = TableKey {
            kind,
            b,
            samples: settings.resolved_samples(b),
            seed: settings.seed,
            grid: settings.grid_points,
            lo: settings.snr_min.to_bits(),
            hi: settings.snr_max.to_bits(),
        };
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().unwrap().get(&key) {
            return Arc::clone(t);
        }
        // built outside the lock; a concurrent duplicate build is harmless
        let table = Arc::new(Self::build(kind, b, settings));
        let mut guard = cache.lock().unwrap();
        Arc::clone(guard.entry(key).or_insert(table))
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn section_len(&self) -> usize {
        self.b
    }

    /// Whether the grid values come from deterministic quadrature.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Grid as `(snr, m, std_err)` triples.
    pub fn grid(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.log_snr
            .iter()
            .zip(&self.m)
            .zip(&self.std_err)
            .map(|((t, m), e)| (t.exp(), *m, *e))
    }

    /// Interpolated `mmse / E` at section SNR `snr >= 0`.
    pub fn normalized_mmse(&self, snr: f64) -> f64 {
        let s_lo = self.log_snr[0].exp();
        let last = self.log_snr.len() - 1;
        let s_hi = self.log_snr[last].exp();
        if snr <= 0.0 {
            self.m_zero
        } else if snr < s_lo {
            self.m_zero + (self.m[0] - self.m_zero) * snr / s_lo
        } else if snr >= s_hi {
            self.m[last] * (-(snr - s_hi) * TAIL_RATE).exp()
        } else {
            self.hermite(snr.ln())
        }
    }

    /// `int_0^snr m(u) du`; twice the mutual information in nats.
    pub fn integrated_mmse(&self, snr: f64) -> f64 {
        let s_lo = self.log_snr[0].exp();
        let last = self.log_snr.len() - 1;
        let s_hi = self.log_snr[last].exp();
        if snr <= 0.0 {
            0.0
        } else if snr < s_lo {
            snr * (self.m_zero + 0.5 * (self.m[0] - self.m_zero) * snr / s_lo)
        } else if snr >= s_hi {
            let mk = self.m[last];
            self.cum[last] + mk * (-(-(snr - s_hi) * TAIL_RATE).exp_m1()) / TAIL_RATE
        } else {
            let t = snr.ln();
            let i = self.interval(t);
            self.cum[i] + self.gl_piece(i, self.log_snr[i], t)
        }
    }

    fn interval(&self, t: f64) -> usize {
        let t0 = self.log_snr[0];
        let h = self.log_snr[1] - t0;
        (((t - t0) / h).floor() as usize).min(self.log_snr.len() - 2)
    }

    fn hermite(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let (x0, x1) = (self.log_snr[i], self.log_snr[i + 1]);
        let h = x1 - x0;
        let u = (t - x0) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        (h00 * self.m[i] + h10 * h * self.slope[i] + h01 * self.m[i + 1] + h11 * h * self.slope[i + 1])
            .max(0.0)
    }

    /// `int_{a}^{b} m(e^t) e^t dt` for `a, b` inside interval `i`.
    fn gl_piece(&self, _i: usize, a: f64, b: f64) -> f64 {
        let (x, w) = gl8();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        x.iter()
            .zip(w)
            .map(|(xi, wi)| {
                let t = mid + half * xi;
                wi * self.hermite(t) * t.exp()
            })
            .sum::<f64>()
            * half
    }

    fn cumulative(&self) -> Vec<f64> {
        let s_lo = self.log_snr[0].exp();
        let mut cum = Vec::with_capacity(self.log_snr.len());
        let mut acc = 0.5 * s_lo * (self.m_zero + self.m[0]);
        cum.push(acc);
        for i in 0..self.log_snr.len() - 1 {
            acc += self.gl_piece(i, self.log_snr[i], self.log_snr[i + 1]);
            cum.push(acc);
        }
        cum
    }
}

fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

/// Fritsch–Carlson monotone slopes.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1)
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * (x[i + 1] - x[i]) + (x[i] - x[i - 1]);
            let w2 = (x[i + 1] - x[i]) + 2.0 * (x[i] - x[i - 1]);
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    // endpoint slopes must not overshoot
    for (i, j) in [(0usize, 0usize), (n - 1, n - 2)] {
        if d[i] * delta[j] <= 0.0 {
            d[i] = 0.0;
        } else if d[i].abs() > 3.0 * delta[j].abs() {
            d[i] = 3.0 * delta[j];
        }
    }
    d
}

/// Monte Carlo `m(s)` at every grid SNR, reusing each noise draw across the
/// whole grid so the estimate is smooth in `s`.
fn monte_carlo_grid(
    kind: PriorKind,
    b: usize,
    snr: &[f64],
    samples: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    const CHUNK: usize = 1024;
    let prior = SectionPrior::new(kind, b, 1.0).expect("validated by caller");
    let k = snr.len();
    let chunks = samples.div_ceil(CHUNK);
    let partial = crate::par::map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = CHUNK.min(samples - c * CHUNK);
        let mut z = vec![0.0; b];
        let mut buf = vec![0.0; b];
        let mut s1 = vec![0.0; k];
        let mut s2 = vec![0.0; k];
        for _ in 0..count {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for (g, &s) in snr.iter().enumerate() {
                let v = prior.normalized_sq_error_sample(s, &z, &mut buf);
                s1[g] += v;
                s2[g] += v * v;
            }
        }
        (s1, s2)
    });
    let mut s1 = vec![0.0; k];
    let mut s2 = vec![0.0; k];
    for (a, b2) in &partial {
        for g in 0..k {
            s1[g] += a[g];
            s2[g] += b2[g];
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = s1.iter().map(|v| v / n).collect();
    let se = mean
        .iter()
        .zip(&s2)
        .map(|(m, q)| ((q / n - m * m).max(0.0) / (n - 1.0).max(1.0)).sqrt())
        .collect();
    (mean, se)
}

/// Scalar functionals of the single-section channel for a fixed prior,
/// backed by a shared [`MmseTable`]. Cheap to clone.
#[derive(Debug, Clone)]
pub struct ScalarChannel {
    prior: SectionPrior,
    table: Arc<MmseTable>,
}

impl ScalarChannel {
    pub fn new(prior: SectionPrior) -> Self {
        Self::with_settings(prior, &ChannelSettings::default())
    }

    pub fn with_settings(prior: SectionPrior, settings: &ChannelSettings) -> Self {
        let table = MmseTable::shared(prior.kind(), prior.section_len(), settings);
        Self { prior, table }
    }

    /// Same table, different section energy.
    pub fn with_energy(&self, energy: f64) -> Result<Self> {
        Ok(Self {
            prior: self.prior.with_energy(energy)?,
            table: Arc::clone(&self.table),
        })
    }

    pub fn prior(&self) -> &SectionPrior {
        &self.prior
    }

    pub fn table(&self) -> &MmseTable {
        &self.table
    }

    pub fn energy(&self) -> f64 {
        self.prior.energy()
    }

    /// `mmse(1/tau) = E ||X - E[X | X + sqrt(tau) Z]||^2`.
    pub fn mmse(&self, inv_tau: f64) -> Result<f64> {
        if !(inv_tau > 0.0) {
            return Err(domain(format!("inverse noise variance must be positive, got {inv_tau}")));
        }
        Ok(self.mmse_at_tau(1.0 / inv_tau))
    }

    /// `mmse` at noise variance `tau` (unchecked; `tau > 0`).
    pub fn mmse_at_tau(&self, tau: f64) -> f64 {
        let e = self.prior.energy();
        e * self.table.normalized_mmse(e / tau)
    }

    /// `I(X_sec; X_sec + sqrt(tau) Z)` in nats.
    pub fn mutual_info(&self, tau: f64) -> Result<f64> {
        let tau = EffectiveNoise::new(tau)?.get();
        Ok(self.mutual_info_at_tau(tau))
    }

    pub fn mutual_info_at_tau(&self, tau: f64) -> f64 {
        0.5 * self.table.integrated_mmse(self.prior.energy() / tau)
    }

    pub fn pe(&self, tau: f64) -> Result<f64> {
        self.prior.pe(tau)
    }

    pub fn pe_at_tau(&self, tau: f64) -> f64 {
        self.prior.pe_at_snr(self.prior.energy() / tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_b2_integrates_to_log_b() {
        let ch = ScalarChannel::new(SectionPrior::flat(2, 1.0).unwrap());
        assert!(ch.table().is_exact());
        let i_inf = ch.mutual_info(1e-6).unwrap();
        assert!((i_inf - 2f64.ln()).abs() < 1e-4, "{i_inf}");
        let bpsk = ScalarChannel::new(SectionPrior::binary_modulated(1, 1.0).unwrap());
        assert!((bpsk.mutual_info(1e-6).unwrap() - 2f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn limits() {
        let ch = ScalarChannel::new(SectionPrior::flat(4, 2.0).unwrap());
        // no observation: E - ||E X||^2 = E (1 - 1/B)
        assert!((ch.mmse(1e-9).unwrap() - 1.5).abs() < 1e-6);
        assert!(ch.mmse(1e6).unwrap() < 1e-12);
        assert!(ch.mutual_info(1e9).unwrap() < 1e-8);
        assert!(ch.mmse(0.0).is_err());
        assert!(ch.mutual_info(0.0).is_err());
    }

    #[test]
    fn monotone_and_bounded() {
        for prior in [
            SectionPrior::flat(4, 1.0).unwrap(),
            SectionPrior::binary_modulated(2, 3.0).unwrap(),
        ] {
            let ch = ScalarChannel::new(prior);
            let mut last = f64::INFINITY;
            for k in 0..50 {
                let inv_tau = 1e-3 * 1.3_f64.powi(k);
                let v = ch.mmse(inv_tau).unwrap();
                assert!(v <= last + 1e-15 && v >= 0.0 && v <= prior.energy());
                last = v;
            }
        }
    }

    #[test]
    fn shared_table_is_reused() {
        let p = SectionPrior::flat(8, 1.0).unwrap();
        let a = ScalarChannel::new(p);
        let b = ScalarChannel::new(p.with_energy(5.0).unwrap());
        assert!(Arc::ptr_eq(&a.table, &b.table));
    }

    #[test]
    fn derivative_of_integral_is_mmse() {
        let ch = ScalarChannel::new(SectionPrior::flat(4, 1.0).unwrap());
        let t = ch.table();
        for s in [0.0005, 0.01, 0.7, 3.3, 12.0, 90.0, 500.0] {
            let h = 1e-5 * s;
            let fd = (t.integrated_mmse(s + h) - t.integrated_mmse(s - h)) / (2.0 * h);
            let m = t.normalized_mmse(s);
            assert!((fd - m).abs() <= 1e-7 * m.max(1e-6), "s={s}: {fd} vs {m}");
        }
    }
}
