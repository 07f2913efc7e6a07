//! AMP decoding with state-evolution coefficients.
//!
//! For `t = 0, 1, ...`:
//!
//! ```text
//! q^t     = y - A x^t + v^t ⊙ q^{t-1}
//! s^t     = x^t + (S^t ⊙ A)^T q^t
//! x^{t+1} = eta(s^t; tau^t)
//! ```
//!
//! with `x^0 = 0`, `v^0 = 0`. Coupled designs use the block-constant
//! `v_i = mu_inner gamma_{r(i)}^t / phi_{r(i)}^{t-1}` and
//! `S_ij = tau_{c(j)}^t / phi_{r(i)}^t`; i.i.d. designs use the scalar
//! `v = mu psi^t / tau^{t-1}` and `S = 1`. The hard decision
//! `x_hat^{t+1}` is the sectionwise MAP estimate from `s^t`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coupling::DesignOperator;
use crate::error::{invalid, Error, Result};
use crate::priors::{ScalarChannel, SectionPrior};
use crate::state_evolution::{csv_err, lemma1_bound, CoupledSe, SeState};

/// When to stop iterating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Harden `s^T`.
    FixedT { t: usize },
    /// Harden `s^T` at the first `T` with `max_c tau_c^T <= max_c tau_c^FP + delta`.
    SeConverged { delta: f64 },
    /// Harden `s^T` for a precomputed wave bound `T`.
    SeBoundT { t: usize },
}

/// Where the per-block effective noise and the Onsager coefficient come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSource {
    #[default]
    StateEvolution,
    /// `phi_r` estimated as `||q_r||^2 / (n/R)` from the current residual, and
    /// `psi_c` as `E - mean ||x_sec||^2` over the sections of block `c`.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpOptions {
    pub stop: StopRule,
    /// Hard cap on `T`.
    pub max_iters: usize,
    /// Diagnostic switch: `false` drops the `v ⊙ q^{t-1}` term.
    pub onsager: bool,
    pub tau_source: TauSource,
    /// Abort when `||q^t|| > explode * ||q^0||`.
    pub explode: f64,
    /// SE convergence tolerance used to locate `tau^FP`.
    pub se_tol: f64,
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            stop: StopRule::SeConverged { delta: 1e-6 },
            max_iters: 200,
            onsager: true,
            tau_source: TauSource::StateEvolution,
            explode: 1e6,
            se_tol: 1e-10,
        }
    }
}

/// Decoder state after the last iteration.
#[derive(Debug, Clone)]
pub struct AmpState {
    /// Soft estimate `x^{T+1} = eta(s^T)`.
    pub x: Vec<f64>,
    /// `q^T`
    pub q: Vec<f64>,
    /// `q^{T-1}`
    pub q_prev: Vec<f64>,
    /// `s^T`
    pub s: Vec<f64>,
    /// `T`
    pub t: usize,
    /// Per column block `tau_c^T` used for the denoiser and hard decision.
    pub tau: Vec<f64>,
    /// SE states `0..=T`.
    pub se: Vec<SeState>,
}

/// Outcome of one decoding run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    /// UER of `x_hat^{T+1}`.
    pub uer: f64,
    /// `||x^t - x||^2 / L` for `t = 0..=T+1`.
    pub mse_trace: Vec<f64>,
    /// `(1/C) sum_c psi_c^t` for `t = 0..=T+1`.
    pub se_psi_trace: Vec<f64>,
    /// UER of `x_hat^t` for `t = 1..=T+1`; `None` at `t = 0`.
    pub uer_trace: Vec<Option<f64>>,
    /// `T`: the hard decision is made from `s^T`.
    pub iterations_run: usize,
    /// `(1/C) sum_c Pe(tau_c^T)`
    pub predicted_uer: f64,
    /// `(4/C) sum_c psi_c^{T+1} / E`
    pub lemma1_bound_value: f64,
}

impl TrialResult {
    /// CSV header `t,empirical_mse,se_psi_bar,uer_if_hardened`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "empirical_mse", "se_psi_bar", "uer_if_hardened"])
            .map_err(csv_err)?;
        for (t, ((m, p), u)) in self
            .mse_trace
            .iter()
            .zip(&self.se_psi_trace)
            .zip(&self.uer_trace)
            .enumerate()
        {
            wr.write_record([
                t.to_string(),
                format!("{m:.10e}"),
                format!("{p:.10e}"),
                u.map(|v| format!("{v}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Coefficient schedule from state evolution.
enum Schedule {
    Iid { mu: f64, sigma2: f64 },
    Coupled { mu_inner: f64 },
}

/// Decode `y` with an i.i.d. design (`R = C = 1`).
pub fn amp_iterate_iid(
    y: &[f64],
    op: &DesignOperator,
    channel: &ScalarChannel,
    mu: f64,
    sigma2: f64,
    opts: &AmpOptions,
    truth: Option<&[f64]>,
) -> Result<(AmpState, TrialResult)> {
    if !op.base().is_trivial() {
        return Err(invalid("the i.i.d. decoder needs a design with a trivial base matrix"));
    }
    let se = CoupledSe::new(op.base(), channel, mu, sigma2)?;
    run(y, op, &se, Schedule::Iid { mu, sigma2 }, opts, truth)
}

/// Decode `y` with a spatially coupled design.
pub fn amp_iterate_sc(
    y: &[f64],
    op: &DesignOperator,
    channel: &ScalarChannel,
    mu: f64,
    sigma2: f64,
    opts: &AmpOptions,
    truth: Option<&[f64]>,
) -> Result<(AmpState, TrialResult)> {
    let se = CoupledSe::new(op.base(), channel, mu, sigma2)?;
    let sched = Schedule::Coupled {
        mu_inner: se.mu_inner(),
    };
    run(y, op, &se, sched, opts, truth)
}

/// Index `T` of the effective observation to harden.
fn stop_index(se: &CoupledSe, opts: &AmpOptions) -> usize {
    match opts.stop {
        StopRule::FixedT { t } | StopRule::SeBoundT { t } => t.min(opts.max_iters),
        StopRule::SeConverged { delta } => {
            let fp = se.run(&crate::state_evolution::SeSettings {
                tol: opts.se_tol,
                max_iters: 100_000,
            });
            let target = fp.last().max_tau() + delta;
            let mut s = se.initial();
            let mut t = 0;
            while s.max_tau() > target && t < opts.max_iters {
                s = se.step(&s);
                t += 1;
            }
            t
        }
    }
}

fn run(
    y: &[f64],
    op: &DesignOperator,
    se: &CoupledSe,
    sched: Schedule,
    opts: &AmpOptions,
    truth: Option<&[f64]>,
) -> Result<(AmpState, TrialResult)> {
    let (n, cols) = (op.n(), op.cols());
    if y.len() != n {
        return Err(Error::Shape {
            what: "observation",
            expected: n,
            got: y.len(),
        });
    }
    if let Some(x0) = truth {
        if x0.len() != cols {
            return Err(Error::Shape {
                what: "true message",
                expected: cols,
                got: x0.len(),
            });
        }
    }
    let prior = *se.channel().prior();
    let b = prior.section_len();
    let l = op.users();
    let maps = *op.maps();
    let (rb, cb) = (maps.rows, maps.cols);
    let big_t = stop_index(se, opts);

    // SE states 0..=T+1 drive the coefficients and the predictions
    let mut states = vec![se.initial()];
    for _ in 0..=big_t {
        let next = se.step(states.last().expect("non-empty"));
        states.push(next);
    }

    let mut x = vec![0.0; cols];
    let mut q_prev = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut s = vec![0.0; cols];
    let mut tau_used = states[0].tau.clone();
    let mut mse_trace = Vec::with_capacity(big_t + 2);
    let mut uer_trace = Vec::with_capacity(big_t + 2);
    let mut hard = vec![0.0; cols];
    let mut q0_norm = 0.0;
    let mut phi_prev = states[0].phi.clone();
    if let Some(x0) = truth {
        mse_trace.push(sq_dist(&x, x0) / l as f64);
        uer_trace.push(None);
    }

    for t in 0..=big_t {
        let st = &states[t];
        // q^t = y - A x^t + v^t ⊙ q^{t-1}
        let ax = op.apply_forward(&x)?;
        for i in 0..n {
            q[i] = y[i] - ax[i];
        }
        if opts.onsager && t > 0 {
            let prev = &states[t - 1];
            match sched {
                _ if opts.tau_source == TauSource::Empirical => {
                    let psi_hat = block_psi_hat(&x, &maps, b, prior.energy());
                    for r in 0..rb {
                        let gamma: f64 = (0..cb).map(|c| op.base().get(r, c) * psi_hat[c]).sum();
                        let v = se.mu_inner() * gamma / phi_prev[r];
                        for i in maps.row_range(r) {
                            q[i] += v * q_prev[i];
                        }
                    }
                }
                Schedule::Iid { mu, sigma2 } => {
                    let v = mu * st.psi[0] / (sigma2 + mu * prev.psi[0]);
                    for i in 0..n {
                        q[i] += v * q_prev[i];
                    }
                }
                Schedule::Coupled { mu_inner, .. } => {
                    for r in 0..rb {
                        let v = mu_inner * st.gamma[r] / prev.phi[r];
                        for i in maps.row_range(r) {
                            q[i] += v * q_prev[i];
                        }
                    }
                }
            }
        }
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if t == 0 {
            q0_norm = qn.max(f64::MIN_POSITIVE);
        }
        if !qn.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                reason: "non-finite residual".into(),
            });
        }
        if qn > opts.explode * q0_norm {
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("residual norm grew by more than {:e}", opts.explode),
            });
        }

        // per-block effective noise and scaling
        let (phi, tau): (Vec<f64>, Vec<f64>) = match opts.tau_source {
            TauSource::StateEvolution => (st.phi.clone(), st.tau.clone()),
            TauSource::Empirical => {
                let phi: Vec<f64> = (0..rb)
                    .map(|r| {
                        let rr = maps.row_range(r);
                        let len = rr.len() as f64;
                        (q[rr].iter().map(|v| v * v).sum::<f64>() / len).max(f64::MIN_POSITIVE)
                    })
                    .collect();
                let tau = (0..cb)
                    .map(|c| {
                        1.0 / (0..rb)
                            .map(|r| op.base().get(r, c) / phi[r])
                            .sum::<f64>()
                    })
                    .collect();
                (phi, tau)
            }
        };
        phi_prev.clone_from(&phi);
        let corr = match sched {
            Schedule::Iid { .. } if opts.tau_source == TauSource::StateEvolution => op.apply_adjoint(&q)?,
            _ => {
                let mut scale = vec![0.0; rb * cb];
                for r in 0..rb {
                    for c in 0..cb {
                        scale[r * cb + c] = tau[c] / phi[r];
                    }
                }
                op.apply_adjoint_scaled(&q, &scale)?
            }
        };
        for j in 0..cols {
            s[j] = x[j] + corr[j];
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: t,
                reason: "non-finite effective observation".into(),
            });
        }
        // x^{t+1} = eta(s^t)
        denoise_sections(&prior, &maps, b, &s, &tau, &mut x);
        if let Some(x0) = truth {
            mse_trace.push(sq_dist(&x, x0) / l as f64);
            harden_sections(&prior, &maps, b, &s, &tau, &mut hard);
            uer_trace.push(Some(uer(&hard, x0, l, b)?));
        }
        std::mem::swap(&mut q_prev, &mut q);
        tau_used = tau;
    }
    // after the loop q_prev holds q^T
    let q_last = q_prev.clone();
    let q_before = q;

    let ch = se.channel();
    let predicted = tau_used.iter().map(|&t| ch.pe_at_tau(t)).sum::<f64>() / tau_used.len() as f64;
    let se_psi_trace: Vec<f64> = states.iter().map(SeState::mean_psi).collect();
    let lemma = lemma1_bound(&states[big_t + 1].psi, prior.energy());
    let final_uer = match uer_trace.last() {
        Some(Some(u)) => *u,
        _ => f64::NAN,
    };
    let state = AmpState {
        x,
        q: q_last,
        q_prev: q_before,
        s,
        t: big_t,
        tau: tau_used,
        se: states,
    };
    let result = TrialResult {
        seed: 0,
        uer: final_uer,
        mse_trace,
        se_psi_trace: if truth.is_some() { se_psi_trace } else { Vec::new() },
        uer_trace,
        iterations_run: big_t,
        predicted_uer: predicted,
        lemma1_bound_value: lemma,
    };
    Ok((state, result))
}

/// `E - mean ||x_sec||^2` per column block: the posterior variance of the
/// sections, which equals `tau` times the divergence of the denoiser.
fn block_psi_hat(x: &[f64], maps: &crate::coupling::BlockMaps, b: usize, energy: f64) -> Vec<f64> {
    (0..maps.cols)
        .map(|c| {
            let r = maps.col_range(c);
            let secs = (r.len() / b) as f64;
            let norm: f64 = x[r].iter().map(|v| v * v).sum();
            (energy - norm / secs).max(0.0)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn denoise_sections(
    prior: &SectionPrior,
    maps: &crate::coupling::BlockMaps,
    b: usize,
    s: &[f64],
    tau: &[f64],
    out: &mut [f64],
) {
    crate::par::for_each_chunk_mut(out, b, |start, sec| {
        let c = maps.col_block(start);
        prior.denoise_into(&s[start..start + b], tau[c], sec);
    });
}

fn harden_sections(
    prior: &SectionPrior,
    maps: &crate::coupling::BlockMaps,
    b: usize,
    s: &[f64],
    tau: &[f64],
    out: &mut [f64],
) {
    for (k, sec) in out.chunks_mut(b).enumerate() {
        let start = k * b;
        let c = maps.col_block(start);
        prior.hard_decision_into(&s[start..start + b], tau[c], sec);
    }
}

/// Sectionwise MAP estimate from `state.s` with the block noise levels in
/// `state.tau`.
pub fn harden(state: &AmpState, prior: &SectionPrior, op: &DesignOperator) -> Vec<f64> {
    let mut out = vec![0.0; state.s.len()];
    harden_sections(prior, op.maps(), prior.section_len(), &state.s, &state.tau, &mut out);
    out
}

/// Fraction of the `l` sections of length `b` where `x_hat` and `x` differ.
pub fn uer(x_hat: &[f64], x: &[f64], l: usize, b: usize) -> Result<f64> {
    if x_hat.len() != l * b || x.len() != l * b {
        return Err(Error::Shape {
            what: "message vectors",
            expected: l * b,
            got: x_hat.len().min(x.len()),
        });
    }
    let wrong = x_hat
        .chunks(b)
        .zip(x.chunks(b))
        .filter(|(a, c)| a != c)
        .count();
    Ok(wrong as f64 / l as f64)
}
