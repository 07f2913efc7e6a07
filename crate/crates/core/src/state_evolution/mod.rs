//! State evolution for i.i.d. and spatially coupled designs.
//!
//! Uncoupled: `psi^{t+1} = mmse(1 / (sigma2 + mu psi^t))`, `psi^0 = E`.
//!
//! Coupled, for `t >= 0`:
//! `gamma_r = sum_c W_rc psi_c`, `phi_r = sigma2 + mu_inner gamma_r`,
//! `tau_c = [sum_r W_rc / phi_r]^{-1}`, `psi_c^{t+1} = mmse(1 / tau_c)`.

pub mod large_payload;

use std::io::Write;

use serde::Serialize;

use crate::coupling::BaseMatrix;
use crate::error::{invalid, Result};
use crate::priors::ScalarChannel;

/// Stopping knobs shared by the fixed-point runners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeSettings {
    /// Stop once every `|psi^{t+1} - psi^t| <= tol * E`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SeSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

/// One uncoupled update.
pub fn uncoupled_step(ch: &ScalarChannel, mu: f64, sigma2: f64, psi: f64) -> f64 {
    ch.mmse_at_tau(sigma2 + mu * psi)
}

/// Result of running the uncoupled recursion to its fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct UncoupledFixedPoint {
    pub psi: f64,
    /// `sigma2 + mu psi`
    pub tau: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `psi^0 = E, psi^1, ...`
    pub psi_trace: Vec<f64>,
}

impl UncoupledFixedPoint {
    /// `tau^t = sigma2 + mu psi^t` along the trace.
    pub fn tau_trace(&self, mu: f64, sigma2: f64) -> Vec<f64> {
        self.psi_trace.iter().map(|p| sigma2 + mu * p).collect()
    }
}

pub fn uncoupled_fixed_point(
    ch: &ScalarChannel,
    mu: f64,
    sigma2: f64,
    settings: &SeSettings,
) -> Result<UncoupledFixedPoint> {
    check_mu_sigma(mu, sigma2)?;
    let e = ch.energy();
    let mut trace = vec![e];
    let mut psi = e;
    let mut converged = false;
    for _ in 0..settings.max_iters {
        // the map is monotone, so the sequence cannot increase; min() absorbs
        // interpolation round-off
        let next = uncoupled_step(ch, mu, sigma2, psi).min(psi);
        trace.push(next);
        let done = (psi - next).abs() <= settings.tol * e;
        psi = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(UncoupledFixedPoint {
        psi,
        tau: sigma2 + mu * psi,
        iterations: trace.len() - 1,
        converged,
        psi_trace: trace,
    })
}

fn check_mu_sigma(mu: f64, sigma2: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid(format!("user density must be positive, got {mu}")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(invalid(format!("noise variance must be positive, got {sigma2}")));
    }
    Ok(())
}

/// Coupled state at iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeState {
    pub t: usize,
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
    pub psi: Vec<f64>,
}

impl SeState {
    /// `(1/C) sum_c psi_c`
    pub fn mean_psi(&self) -> f64 {
        self.psi.iter().sum::<f64>() / self.psi.len() as f64
    }

    pub fn max_psi(&self) -> f64 {
        self.psi.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_tau(&self) -> f64 {
        self.tau.iter().copied().fold(0.0, f64::max)
    }
}

/// Coupled recursion for a fixed base matrix, density and noise level.
#[derive(Debug, Clone)]
pub struct CoupledSe {
    base: BaseMatrix,
    channel: ScalarChannel,
    mu: f64,
    mu_inner: f64,
    sigma2: f64,
    /// Per column: the row of a lone unit entry, if that is the whole column.
    lone_row: Vec<Option<usize>>,
}

impl CoupledSe {
    pub fn new(base: &BaseMatrix, channel: &ScalarChannel, mu: f64, sigma2: f64) -> Result<Self> {
        check_mu_sigma(mu, sigma2)?;
        let lone_row = (0..base.cols())
            .map(|c| {
                let nz: Vec<usize> = (0..base.rows()).filter(|&r| base.get(r, c) != 0.0).collect();
                match nz.as_slice() {
                    [r] if base.get(*r, c) == 1.0 => Some(*r),
                    _ => None,
                }
            })
            .collect();
        Ok(Self {
            base: base.clone(),
            channel: channel.clone(),
            mu,
            mu_inner: base.mu_inner(mu),
            sigma2,
            lone_row,
        })
    }

    pub fn base(&self) -> &BaseMatrix {
        &self.base
    }

    pub fn channel(&self) -> &ScalarChannel {
        &self.channel
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mu_inner(&self) -> f64 {
        self.mu_inner
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// State with `psi^0 = E` in every block.
    pub fn initial(&self) -> SeState {
        self.state_from_psi(0, vec![self.channel.energy(); self.base.cols()])
    }

    /// Fill `gamma, phi, tau` for the given `psi`.
    pub fn state_from_psi(&self, t: usize, psi: Vec<f64>) -> SeState {
        let (rows, cols) = (self.base.rows(), self.base.cols());
        let gamma: Vec<f64> = (0..rows)
            .map(|r| (0..cols).map(|c| self.base.get(r, c) * psi[c]).sum())
            .collect();
        let phi: Vec<f64> = gamma.iter().map(|g| self.sigma2 + self.mu_inner * g).collect();
        let tau = (0..cols)
            .map(|c| match self.lone_row[c] {
                // avoids the 1/(1/phi) round trip, so R = C = 1 reproduces the
                // uncoupled recursion bit for bit
                Some(r) => phi[r],
                None => 1.0 / (0..rows).map(|r| self.base.get(r, c) / phi[r]).sum::<f64>(),
            })
            .collect();
        SeState {
            t,
            gamma,
            phi,
            tau,
            psi,
        }
    }

    /// One synchronous update.
    pub fn step(&self, s: &SeState) -> SeState {
        let psi = s
            .tau
            .iter()
            .zip(&s.psi)
            .map(|(&tau, &prev)| self.channel.mmse_at_tau(tau).min(prev))
            .collect();
        self.state_from_psi(s.t + 1, psi)
    }

    /// Iterate from `psi^0 = E` until converged or `max_iters`.
    pub fn run(&self, settings: &SeSettings) -> CoupledTrace {
        let e = self.channel.energy();
        let mut states = vec![self.initial()];
        let mut converged = false;
        for _ in 0..settings.max_iters {
            let cur = states.last().expect("non-empty");
            let next = self.step(cur);
            let change = next
                .psi
                .iter()
                .zip(&cur.psi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            states.push(next);
            if change <= settings.tol * e {
                converged = true;
                break;
            }
        }
        CoupledTrace { states, converged }
    }

    /// Run for exactly `iters` steps, no early stop.
    pub fn run_for(&self, iters: usize) -> CoupledTrace {
        let mut states = vec![self.initial()];
        for _ in 0..iters {
            let next = self.step(states.last().expect("non-empty"));
            states.push(next);
        }
        CoupledTrace {
            states,
            converged: false,
        }
    }
}

/// States `0..=T` of a coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrace {
    pub states: Vec<SeState>,
    pub converged: bool,
}

impl CoupledTrace {
    pub fn last(&self) -> &SeState {
        self.states.last().expect("trace is never empty")
    }

    pub fn iterations(&self) -> usize {
        self.states.len() - 1
    }

    /// First `t` with `max_c psi_c^t <= level`.
    pub fn first_below(&self, level: f64) -> Option<usize> {
        self.states.iter().position(|s| s.max_psi() <= level)
    }

    /// CSV with header `t,block,gamma,phi,tau,psi`; one row per (t, block).
    /// Blocks are 1-based; `gamma`/`phi` are empty for columns beyond `R`
    /// and `tau`/`psi` for rows beyond `C`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "block", "gamma", "phi", "tau", "psi"])
            .map_err(csv_err)?;
        for s in &self.states {
            let blocks = s.gamma.len().max(s.psi.len());
            for k in 0..blocks {
                let cell = |v: &[f64]| v.get(k).map(|x| format!("{x:.12e}")).unwrap_or_default();
                wr.write_record([
                    s.t.to_string(),
                    (k + 1).to_string(),
                    cell(&s.gamma),
                    cell(&s.phi),
                    cell(&s.tau),
                    cell(&s.psi),
                ])
                .map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Format(format!("csv: {e}"))
}

/// `(1/C) sum_c Pe(tau_c)`.
pub fn predicted_uer(ch: &ScalarChannel, tau: &[f64]) -> Result<f64> {
    if tau.is_empty() {
        return Err(invalid("need at least one block"));
    }
    let mut acc = 0.0;
    for &t in tau {
        acc += ch.pe(t)?;
    }
    Ok(acc / tau.len() as f64)
}

/// `(4/C) sum_c psi_c / E`, an upper bound on the limiting UER of the hard
/// decision made from the current soft estimate.
pub fn lemma1_bound(psi: &[f64], energy: f64) -> f64 {
    4.0 * psi.iter().sum::<f64>() / (psi.len() as f64 * energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::SectionPrior;

    fn flat4() -> ScalarChannel {
        ScalarChannel::new(SectionPrior::flat(4, 2.0).unwrap())
    }

    #[test]
    fn lemma1_examples() {
        assert_eq!(lemma1_bound(&[0.0, 0.0], 1.0), 0.0);
        assert_eq!(lemma1_bound(&[3.0; 5], 3.0), 4.0);
        assert!((lemma1_bound(&[0.125, 0.25], 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn trivial_base_reproduces_uncoupled_bitwise() {
        let ch = flat4();
        let (mu, sigma2) = (0.6, 0.3);
        let fp = uncoupled_fixed_point(&ch, mu, sigma2, &SeSettings::default()).unwrap();
        let sc = CoupledSe::new(&BaseMatrix::trivial(), &ch, mu, sigma2).unwrap();
        let tr = sc.run(&SeSettings::default());
        assert_eq!(tr.states.len(), fp.psi_trace.len());
        for (s, &p) in tr.states.iter().zip(&fp.psi_trace) {
            assert_eq!(s.psi[0].to_bits(), p.to_bits());
            assert_eq!(s.tau[0].to_bits(), (sigma2 + mu * p).to_bits());
        }
    }

    #[test]
    fn predicted_uer_is_block_mean() {
        let ch = flat4();
        let a = ch.pe(0.5).unwrap();
        let b = ch.pe(0.1).unwrap();
        assert_eq!(predicted_uer(&ch, &[0.5]).unwrap(), a);
        assert!((predicted_uer(&ch, &[0.5, 0.5]).unwrap() - a).abs() < 1e-15);
        assert!((predicted_uer(&ch, &[0.5, 0.1]).unwrap() - 0.5 * (a + b)).abs() < 1e-15);
        assert!(predicted_uer(&ch, &[]).is_err());
    }

    #[test]
    fn csv_trace_layout() {
        let ch = flat4();
        let base = BaseMatrix::new(2, 3, 0.0).unwrap();
        let tr = CoupledSe::new(&base, &ch, 0.5, 0.5).unwrap().run_for(2);
        let mut out = Vec::new();
        tr.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,block,gamma,phi,tau,psi");
        // R = 4 rows per iteration, 3 iterations
        assert_eq!(lines.len(), 1 + 3 * 4);
        assert!(lines[4].starts_with("0,4,") && lines[4].ends_with(",,"));
    }
}
