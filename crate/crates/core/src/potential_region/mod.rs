//! Potential function, its stationary points and minimizers, and achievable
//! region curves.
//!
//! `F(mu, sigma2, psi) = I(tau) + (1/(2 mu)) [ln(tau/sigma2) - mu psi / tau]`
//! with `tau = sigma2 + mu psi` and `I(tau)` the single-section mutual
//! information at noise variance `tau`. Stationary points of `F` in `psi` are
//! exactly the fixed points of uncoupled state evolution.

mod converse;

pub use converse::{binary_entropy, converse_min_ebn0, ConverseBound};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::priors::{ChannelSettings, PriorKind, ScalarChannel, SectionPrior};
use crate::state_evolution::csv_err;

/// `F(mu, sigma2, psi)`.
pub fn potential(ch: &ScalarChannel, mu: f64, sigma2: f64, psi: f64) -> f64 {
    let tau = sigma2 + mu * psi;
    ch.mutual_info_at_tau(tau) + ((mu * psi / sigma2).ln_1p() - mu * psi / tau) / (2.0 * mu)
}

/// `dF/dpsi = mu / (2 tau^2) (psi - mmse(1/tau))`.
pub fn potential_derivative(ch: &ScalarChannel, mu: f64, sigma2: f64, psi: f64) -> f64 {
    let tau = sigma2 + mu * psi;
    mu / (2.0 * tau * tau) * (psi - ch.mmse_at_tau(tau))
}

/// Grid used to scan `[0, E]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSettings {
    /// Uniform points on `[0, E]`.
    pub uniform: usize,
    /// Extra log-spaced points in `(0, E / uniform)`.
    pub log_points: usize,
    /// Smallest log-spaced point, relative to `E`.
    pub log_floor: f64,
    /// Minimizers within this much of the global minimum are all reported.
    pub tie_tol: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            uniform: 1 << 12,
            log_points: 256,
            log_floor: 1e-16,
            tie_tol: 1e-10,
        }
    }
}

impl ScanSettings {
    fn grid(&self, e: f64) -> Vec<f64> {
        let n = self.uniform.max(2);
        let first = e / (n - 1) as f64;
        let lo = (self.log_floor * e).ln();
        let hi = first.ln();
        let mut g = vec![0.0];
        for k in 0..self.log_points {
            g.push((lo + (hi - lo) * k as f64 / self.log_points as f64).exp());
        }
        g.extend((1..n).map(|k| e * k as f64 / (n - 1) as f64));
        g
    }
}

/// Sampled potential on the scan grid.
#[derive(Debug, Clone)]
pub struct PotentialLandscape {
    pub mu: f64,
    pub sigma2: f64,
    pub psi: Vec<f64>,
    pub f: Vec<f64>,
    pub df: Vec<f64>,
}

impl PotentialLandscape {
    pub fn new(ch: &ScalarChannel, mu: f64, sigma2: f64, scan: &ScanSettings) -> Result<Self> {
        check(mu, sigma2)?;
        let psi = scan.grid(ch.energy());
        let f = crate::par::map_slice(&psi, |&p| potential(ch, mu, sigma2, p));
        let df = crate::par::map_slice(&psi, |&p| potential_derivative(ch, mu, sigma2, p));
        Ok(Self {
            mu,
            sigma2,
            psi,
            f,
            df,
        })
    }
}

fn check(mu: f64, sigma2: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid(format!("user density must be positive, got {mu}")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(invalid(format!("noise variance must be positive, got {sigma2}")));
    }
    Ok(())
}

/// Root of the derivative in `[lo, hi]` where it goes from `<= 0` to `> 0`.
fn bisect_derivative(ch: &ScalarChannel, mu: f64, sigma2: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if potential_derivative(ch, mu, sigma2, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Global minimizers of `F` over `[0, E]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimizers {
    /// Ascending.
    pub psi: Vec<f64>,
    pub f_min: f64,
}

impl Minimizers {
    /// `max M(mu, sigma2)`.
    pub fn max(&self) -> f64 {
        *self.psi.last().expect("at least one minimizer")
    }
}

/// Every local minimum on the grid is refined by bisection on the exact
/// derivative; those within `tie_tol` of the best are returned.
pub fn minimizer_set(ch: &ScalarChannel, mu: f64, sigma2: f64, scan: &ScanSettings) -> Result<Minimizers> {
    let land = PotentialLandscape::new(ch, mu, sigma2, scan)?;
    Ok(minimizers_of(ch, &land, scan.tie_tol))
}

fn minimizers_of(ch: &ScalarChannel, land: &PotentialLandscape, tie_tol: f64) -> Minimizers {
    let (mu, sigma2) = (land.mu, land.sigma2);
    let n = land.psi.len();
    let mut cands: Vec<(f64, f64)> = Vec::new();
    // the derivative is negative at 0 and positive at E, so every local
    // minimum is an interior sign change from - to +
    for k in 0..n - 1 {
        if land.df[k] <= 0.0 && land.df[k + 1] > 0.0 {
            let p = bisect_derivative(ch, mu, sigma2, land.psi[k], land.psi[k + 1]);
            cands.push((p, potential(ch, mu, sigma2, p)));
        }
    }
    if cands.is_empty() {
        // degenerate grids: fall back to the best sample
        let k = (0..n)
            .min_by(|&a, &b| land.f[a].total_cmp(&land.f[b]))
            .expect("non-empty grid");
        cands.push((land.psi[k], land.f[k]));
    }
    let f_min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tol = tie_tol * f_min.abs().max(1.0);
    let psi = cands.iter().filter(|c| c.1 <= f_min + tol).map(|c| c.0).collect();
    Minimizers { psi, f_min }
}

/// Largest `psi` with `dF/dpsi = 0`, i.e. the uncoupled SE fixed point.
pub fn largest_stationary(ch: &ScalarChannel, mu: f64, sigma2: f64, scan: &ScanSettings) -> Result<f64> {
    check(mu, sigma2)?;
    let grid = scan.grid(ch.energy());
    let df = crate::par::map_slice(&grid, |&p| potential_derivative(ch, mu, sigma2, p));
    match (0..grid.len() - 1).rev().find(|&k| df[k] <= 0.0) {
        Some(k) => Ok(bisect_derivative(ch, mu, sigma2, grid[k], grid[k + 1])),
        None => Ok(0.0),
    }
}

/// `tau* = sigma2 + mu max M(mu, sigma2)`.
pub fn tau_star(ch: &ScalarChannel, mu: f64, sigma2: f64, scan: &ScanSettings) -> Result<f64> {
    Ok(sigma2 + mu * minimizer_set(ch, mu, sigma2, scan)?.max())
}

/// `sigma2 + theta mu (max M(theta mu, sigma2) + epsilon)`.
pub fn tau_bar(
    ch: &ScalarChannel,
    mu: f64,
    sigma2: f64,
    theta: f64,
    epsilon: f64,
    scan: &ScanSettings,
) -> Result<f64> {
    if !(theta >= 1.0) || !(epsilon >= 0.0) {
        return Err(invalid("need theta >= 1 and epsilon >= 0"));
    }
    let m = minimizer_set(ch, theta * mu, sigma2, scan)?.max();
    Ok(sigma2 + theta * mu * (m + epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    IidAmp,
    ScAmp,
    Converse,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::IidAmp => "iid_amp",
            Scheme::ScAmp => "sc_amp",
            Scheme::Converse => "converse",
        }
    }
}

/// Search range and tolerance for the minimum `Eb/N0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbN0Search {
    pub lo_db: f64,
    pub hi_db: f64,
    pub tol_db: f64,
}

impl Default for EbN0Search {
    fn default() -> Self {
        Self {
            lo_db: -10.0,
            hi_db: 40.0,
            tol_db: 1e-3,
        }
    }
}

/// `sigma2` giving `Eb/N0 = ebn0_db` when `E = payload_bits` (unit `Eb`).
pub fn sigma2_for_ebn0_db(ebn0_db: f64) -> f64 {
    0.5 / 10f64.powf(ebn0_db / 10.0)
}

/// Minimum `Eb/N0` (dB) found, or the cap when unreachable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinEbN0 {
    pub db: f64,
    pub reachable: bool,
}

/// Effective noise that governs the predicted error rate of `scheme`:
/// `tau^FP` for i.i.d. designs and `tau*` for coupled ones.
pub fn scheme_tau(
    scheme: Scheme,
    ch: &ScalarChannel,
    mu: f64,
    sigma2: f64,
    scan: &ScanSettings,
) -> Result<f64> {
    match scheme {
        Scheme::IidAmp => Ok(sigma2 + mu * largest_stationary(ch, mu, sigma2, scan)?),
        Scheme::ScAmp => tau_star(ch, mu, sigma2, scan),
        Scheme::Converse => Err(invalid("the converse has no effective noise")),
    }
}

/// Predicted UER of `scheme` at `ebn0_db`.
pub fn predicted_uer_at(
    scheme: Scheme,
    ch: &ScalarChannel,
    mu: f64,
    ebn0_db: f64,
    scan: &ScanSettings,
) -> Result<f64> {
    let ch = ch.with_energy(ch.prior().payload_bits())?;
    let tau = scheme_tau(scheme, &ch, mu, sigma2_for_ebn0_db(ebn0_db), scan)?;
    Ok(ch.pe_at_tau(tau))
}

/// Smallest `Eb/N0` at which the predicted UER of `scheme` is at most
/// `target_uer`, by bisection in dB.
pub fn min_ebn0(
    scheme: Scheme,
    ch: &ScalarChannel,
    mu: f64,
    target_uer: f64,
    search: &EbN0Search,
    scan: &ScanSettings,
) -> Result<MinEbN0> {
    if !(target_uer > 0.0 && target_uer < 1.0) {
        return Err(invalid(format!("target UER must lie in (0, 1), got {target_uer}")));
    }
    if scheme == Scheme::Converse {
        let bits = ch.prior().payload_bits();
        let v = converse_min_ebn0(mu, bits, target_uer)?.value;
        return Ok(MinEbN0 {
            db: 10.0 * v.log10(),
            reachable: true,
        });
    }
    let ok = |db: f64| -> Result<bool> {
        Ok(predicted_uer_at(scheme, ch, mu, db, scan)? <= target_uer)
    };
    let (mut lo, mut hi) = (search.lo_db, search.hi_db);
    if !ok(hi)? {
        return Ok(MinEbN0 {
            db: hi,
            reachable: false,
        });
    }
    if ok(lo)? {
        return Ok(MinEbN0 {
            db: lo,
            reachable: true,
        });
    }
    while hi - lo > search.tol_db {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(MinEbN0 {
        db: 0.5 * (lo + hi),
        reachable: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionPoint {
    pub mu: f64,
    pub min_ebn0_db: f64,
    pub reachable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCurve {
    pub scheme: Scheme,
    pub target_uer: f64,
    pub payload_bits: f64,
    pub points: Vec<RegionPoint>,
}

/// Describes a prior for region computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionPrior {
    pub kind: PriorKind,
    pub b: usize,
    pub channel: ChannelSettings,
}

impl RegionPrior {
    pub fn channel(&self) -> Result<ScalarChannel> {
        let p = SectionPrior::new(self.kind, self.b, 1.0)?;
        let ch = ScalarChannel::with_settings(p, &self.channel);
        ch.with_energy(p.payload_bits())
    }
}

/// `min_ebn0` (or the converse) over a grid of densities; points sorted by `mu`.
pub fn region_curve(
    scheme: Scheme,
    mu_grid: &[f64],
    prior: &RegionPrior,
    target_uer: f64,
    search: &EbN0Search,
    scan: &ScanSettings,
) -> Result<RegionCurve> {
    let ch = prior.channel()?;
    let mut mus = mu_grid.to_vec();
    mus.sort_by(f64::total_cmp);
    let pts = crate::par::map_slice(&mus, |&mu| {
        min_ebn0(scheme, &ch, mu, target_uer, search, scan).map(|m| RegionPoint {
            mu,
            min_ebn0_db: m.db,
            reachable: m.reachable,
        })
    });
    Ok(RegionCurve {
        scheme,
        target_uer,
        payload_bits: ch.prior().payload_bits(),
        points: pts.into_iter().collect::<Result<_>>()?,
    })
}

/// CSV header `scheme,mu,min_ebn0_db,reachable,target_uer,payload_bits`.
pub fn write_region_csv<W: Write>(curves: &[RegionCurve], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scheme", "mu", "min_ebn0_db", "reachable", "target_uer", "payload_bits"])
        .map_err(csv_err)?;
    for c in curves {
        for p in &c.points {
            wr.write_record([
                c.scheme.as_str().to_string(),
                format!("{}", p.mu),
                format!("{:.6}", p.min_ebn0_db),
                p.reachable.to_string(),
                format!("{}", c.target_uer),
                format!("{}", c.payload_bits),
            ])
            .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(b: usize, e: f64) -> ScalarChannel {
        ScalarChannel::new(SectionPrior::flat(b, e).unwrap())
    }

    #[test]
    fn potential_at_zero_is_mutual_information() {
        let ch = flat(4, 1.0);
        let v = potential(&ch, 0.5, 0.25, 0.0);
        assert_eq!(v, ch.mutual_info(0.25).unwrap());
    }

    #[test]
    fn bracket_is_second_order_small() {
        let ch = flat(4, 1.0);
        let (mu, sigma2) = (0.5, 10.0);
        for psi in [1e-3, 1e-2] {
            let bracket = potential(&ch, mu, sigma2, psi) - ch.mutual_info(sigma2 + mu * psi).unwrap();
            let x = mu * psi / sigma2;
            assert!(bracket.abs() <= x * x / mu, "{psi}: {bracket}");
        }
    }

    #[test]
    fn extreme_noise_minimizers() {
        let ch = flat(4, 1.0);
        let m = minimizer_set(&ch, 0.5, 1e4, &ScanSettings::default()).unwrap();
        assert!(m.max() > 0.7, "{m:?}");
        let m = minimizer_set(&ch, 0.05, 1e-3, &ScanSettings::default()).unwrap();
        assert!(m.max() < 1e-6, "{m:?}");
    }

    #[test]
    fn region_csv_rows() {
        let prior = RegionPrior {
            kind: PriorKind::Flat,
            b: 4,
            channel: ChannelSettings::default(),
        };
        let s = EbN0Search::default();
        let scan = ScanSettings::default();
        let iid = region_curve(Scheme::IidAmp, &[0.3, 0.1], &prior, 1e-3, &s, &scan).unwrap();
        assert_eq!(iid.points[0].mu, 0.1);
        let conv = region_curve(Scheme::Converse, &[0.1, 0.3], &prior, 1e-3, &s, &scan).unwrap();
        let mut out = Vec::new();
        write_region_csv(&[iid, conv], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        let mut empty = Vec::new();
        write_region_csv(&[], &mut empty).unwrap();
        assert_eq!(
            String::from_utf8(empty).unwrap().trim(),
            "scheme,mu,min_ebn0_db,reachable,target_uer,payload_bits"
        );
    }
}
