//! Monte Carlo experiments over the channel `y = A x + w`.
//!
//! Seeds: trial `k` of a point draws everything (design seed, messages, noise)
//! from ChaCha8 keyed by the master seed on stream `k`. Results therefore do
//! not depend on the thread count or on which trials run together, and the
//! same trial index reuses its design and noise direction across `Eb/N0`
//! values, which keeps bisection in `Eb/N0` close to monotone.

pub mod config;

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::amp_decoder::{amp_iterate_iid, amp_iterate_sc, AmpOptions, TrialResult};
use crate::coupling::{BaseMatrix, DesignOperator, OperatorKind};
use crate::error::{Error, Result};
use crate::potential_region::{min_ebn0, sigma2_for_ebn0_db, EbN0Search, ScanSettings, Scheme};
use crate::priors::{ScalarChannel, SectionPrior};
use crate::state_evolution::{csv_err, predicted_uer, CoupledSe, SeSettings};

pub use config::{ExperimentConfig, Preset};

/// One fully resolved simulation point.
#[derive(Debug, Clone)]
pub struct Point {
    /// Channel with `E = payload_bits` (unit energy per bit; `E = 1` for `B = 1`).
    pub channel: ScalarChannel,
    pub base: BaseMatrix,
    pub users: usize,
    pub n: usize,
    pub ebn0_db: f64,
    pub operator: OperatorKind,
    pub amp: AmpOptions,
    pub master_seed: u64,
}

impl Point {
    /// Resolve the point described by `cfg` at density `mu` and `ebn0_db`.
    pub fn from_config(cfg: &ExperimentConfig, mu: f64, ebn0_db: f64) -> Result<Self> {
        Self::with_base(cfg, cfg.base()?, mu, ebn0_db)
    }

    pub fn with_base(cfg: &ExperimentConfig, base: BaseMatrix, mu: f64, ebn0_db: f64) -> Result<Self> {
        let users = cfg.users();
        let n = match cfg.system.n {
            Some(n) if (mu - cfg.mu()).abs() < 1e-15 => n,
            _ => config::code_length(users, mu, base.rows()),
        };
        let prior = SectionPrior::new(cfg.prior.kind, cfg.prior.b, 1.0)?;
        // a one-column flat section carries no bits; give it unit energy
        let energy = if prior.payload_bits() > 0.0 { prior.payload_bits() } else { 1.0 };
        let channel = ScalarChannel::with_settings(prior, &cfg.channel_settings()).with_energy(energy)?;
        let operator = config::resolve_operator(cfg.decoder.operator, n, users * cfg.prior.b);
        Ok(Self {
            channel,
            base,
            users,
            n,
            ebn0_db,
            operator,
            amp: cfg.amp_options(),
            master_seed: cfg.run.master_seed,
        })
    }

    /// Effective density `L / n`.
    pub fn mu(&self) -> f64 {
        self.users as f64 / self.n as f64
    }

    pub fn sigma2(&self) -> f64 {
        sigma2_for_ebn0_db(self.ebn0_db)
    }

    pub fn prior(&self) -> &SectionPrior {
        self.channel.prior()
    }

    pub fn at_ebn0(&self, ebn0_db: f64) -> Self {
        Self {
            ebn0_db,
            ..self.clone()
        }
    }

    pub fn scheme(&self) -> Scheme {
        if self.base.is_trivial() {
            Scheme::IidAmp
        } else {
            Scheme::ScAmp
        }
    }
}

/// The random objects of one trial.
pub struct TrialInstance {
    pub op: DesignOperator,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draw design, messages and noise for trial `trial_index`.
pub fn sample_trial(p: &Point, trial_index: u64) -> Result<TrialInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.master_seed);
    rng.set_stream(trial_index);
    let op_seed = rng.next_u64();
    let b = p.prior().section_len();
    let op = DesignOperator::sample(&p.base, p.n, p.users, b, p.operator, op_seed)?;
    let mut x = vec![0.0; p.users * b];
    for sec in x.chunks_mut(b) {
        p.prior().sample_into(&mut rng, sec);
    }
    let sigma = p.sigma2().sqrt();
    let mut y = op.apply_forward(&x)?;
    for v in &mut y {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(TrialInstance { op, x, y })
}

/// Run one trial: sample, decode, harden and score. `seed` in the result is
/// the trial index.
pub fn run_trial(p: &Point, trial_index: u64) -> Result<TrialResult> {
    let inst = sample_trial(p, trial_index)?;
    let decode = if p.base.is_trivial() {
        amp_iterate_iid
    } else {
        amp_iterate_sc
    };
    let (_, mut res) = decode(&inst.y, &inst.op, &p.channel, p.mu(), p.sigma2(), &p.amp, Some(&inst.x))?;
    res.seed = trial_index;
    Ok(res)
}

/// Aggregate over the trials of one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub mu: f64,
    pub n: usize,
    pub ebn0_db: f64,
    pub trials: usize,
    /// `L * trials`
    pub sections: usize,
    pub section_errors: usize,
    pub uer_mean: f64,
    /// Binomial standard error over all sections.
    pub uer_se: f64,
    pub predicted_uer: f64,
    pub mean_iterations: f64,
    /// Trials whose decoder diverged; scored as all sections wrong.
    pub diverged: usize,
    /// Mean of the per-trial `||x^t - x||^2 / L` over trials, `t = 0..=T+1`.
    pub mse_trace: Vec<f64>,
    pub se_psi_trace: Vec<f64>,
}

/// `(mean, standard error)` of a binomial proportion.
pub fn binomial_mean_se(errors: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 0.0);
    }
    let p = errors as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

/// Run `trials` independent trials in parallel and aggregate in index order.
pub fn run_point(p: &Point, trials: usize) -> Result<PointResult> {
    let outcomes = crate::par::map_range(trials, |k| run_trial(p, k as u64));
    let mut results = Vec::with_capacity(trials);
    let mut diverged = 0;
    for o in outcomes {
        match o {
            Ok(r) => results.push(Some(r)),
            Err(Error::Diverged { .. }) => {
                diverged += 1;
                results.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(aggregate(p, &results, diverged))
}

fn aggregate(p: &Point, results: &[Option<TrialResult>], diverged: usize) -> PointResult {
    let l = p.users;
    let trials = results.len();
    let mut errors = diverged * l;
    let mut iters = 0.0;
    let ok: Vec<&TrialResult> = results.iter().flatten().collect();
    for r in &ok {
        errors += (r.uer * l as f64).round() as usize;
        iters += r.iterations_run as f64;
    }
    let len = ok.iter().map(|r| r.mse_trace.len()).max().unwrap_or(0);
    let mut mse = vec![0.0; len];
    for r in &ok {
        for (m, v) in mse.iter_mut().zip(&r.mse_trace) {
            *m += v / ok.len() as f64;
        }
    }
    let (uer_mean, uer_se) = binomial_mean_se(errors, l * trials);
    let predicted = ok.first().map(|r| r.predicted_uer).unwrap_or(f64::NAN);
    PointResult {
        mu: p.mu(),
        n: p.n,
        ebn0_db: p.ebn0_db,
        trials,
        sections: l * trials,
        section_errors: errors,
        uer_mean,
        uer_se,
        predicted_uer: predicted,
        mean_iterations: if ok.is_empty() { 0.0 } else { iters / ok.len() as f64 },
        diverged,
        mse_trace: mse,
        se_psi_trace: ok.first().map(|r| r.se_psi_trace.clone()).unwrap_or_default(),
    }
}

/// Outcome of the empirical threshold search at one density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Converged,
    /// Already below target at the lower end of the bracket.
    LowerCap,
    /// Still above target at the upper end of the bracket.
    Unreachable,
    /// Observations were not monotone in `Eb/N0` even after doubling trials.
    NonMonotone,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalThreshold {
    pub mu: f64,
    pub analytic_db: f64,
    pub analytic_reachable: bool,
    /// Smallest tested `Eb/N0` meeting the target (bracket end when capped).
    pub empirical_db: f64,
    pub status: SearchStatus,
    pub trials: usize,
    /// Every evaluated point, sorted by `Eb/N0`.
    pub evaluated: Vec<PointResult>,
}

/// Analytic minimum `Eb/N0` of the point's scheme at its effective density.
pub fn analytic_min_ebn0(p: &Point, target_uer: f64) -> Result<(f64, bool)> {
    let m = min_ebn0(
        p.scheme(),
        &p.channel,
        p.mu(),
        target_uer,
        &EbN0Search {
            tol_db: 1e-2,
            ..EbN0Search::default()
        },
        &ScanSettings::default(),
    )?;
    Ok((m.db, m.reachable))
}

/// Bisection in dB over `run_point` outcomes, bracketed by the analytic
/// threshold +- 3 dB. Assumes the UER is non-increasing in `Eb/N0`; when the
/// evaluated points contradict that by more than two standard errors the
/// search is repeated once with twice the trials and then flagged.
pub fn empirical_min_ebn0(p: &Point, target_uer: f64, tol_db: f64, trials: usize) -> Result<EmpiricalThreshold> {
    let (analytic_db, reachable) = analytic_min_ebn0(p, target_uer)?;
    let mut t = trials;
    for attempt in 0..2 {
        let (db, status, evaluated) = bisect(p, analytic_db, target_uer, tol_db, t)?;
        if monotone(&evaluated) || attempt == 1 {
            let status = if monotone(&evaluated) {
                status
            } else {
                SearchStatus::NonMonotone
            };
            return Ok(EmpiricalThreshold {
                mu: p.mu(),
                analytic_db,
                analytic_reachable: reachable,
                empirical_db: db,
                status,
                trials: t,
                evaluated,
            });
        }
        t *= 2;
    }
    unreachable!("the loop returns on its second pass")
}

fn bisect(
    p: &Point,
    center: f64,
    target: f64,
    tol_db: f64,
    trials: usize,
) -> Result<(f64, SearchStatus, Vec<PointResult>)> {
    let mut seen = Vec::new();
    let mut eval = |db: f64| -> Result<bool> {
        let r = run_point(&p.at_ebn0(db), trials)?;
        let ok = r.uer_mean <= target;
        seen.push(r);
        Ok(ok)
    };
    let (mut lo, mut hi) = (center - 3.0, center + 3.0);
    let out = if !eval(hi)? {
        (hi, SearchStatus::Unreachable)
    } else if eval(lo)? {
        (lo, SearchStatus::LowerCap)
    } else {
        while hi - lo > tol_db {
            let mid = 0.5 * (lo + hi);
            if eval(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (hi, SearchStatus::Converged)
    };
    seen.sort_by(|a, b| a.ebn0_db.total_cmp(&b.ebn0_db));
    Ok((out.0, out.1, seen))
}

fn monotone(pts: &[PointResult]) -> bool {
    pts.windows(2).all(|w| {
        let slack = 2.0 * (w[0].uer_se.powi(2) + w[1].uer_se.powi(2)).sqrt();
        w[1].uer_mean <= w[0].uer_mean + slack
    })
}

/// Grid sweep results.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SweepResult {
    pub points: Vec<PointResult>,
    pub thresholds: Vec<EmpiricalThreshold>,
    pub omega: Vec<OmegaChoice>,
}

/// Evaluate every `(mu, Eb/N0)` of the grid and, when asked, the empirical
/// threshold at each `mu`. Points run in parallel; output is in grid order.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let trials = cfg.trials();
    let grid: Vec<(f64, f64)> = cfg
        .sweep
        .mu
        .iter()
        .flat_map(|&m| cfg.sweep.ebn0_db.iter().map(move |&e| (m, e)))
        .collect();
    let points = crate::par::map_slice(&grid, |&(mu, db)| {
        Point::from_config(cfg, mu, db).and_then(|p| run_point(&p, trials))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let thresholds = if cfg.sweep.bisect {
        crate::par::map_slice(&cfg.sweep.mu, |&mu| {
            Point::from_config(cfg, mu, cfg.channel.ebn0_db)
                .and_then(|p| empirical_min_ebn0(&p, cfg.run.target_uer, cfg.sweep.tol_db, trials))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let omega = if cfg.sweep.omega.is_empty() || !cfg.coupled() {
        Vec::new()
    } else {
        cfg.sweep
            .mu
            .iter()
            .map(|&mu| optimize_omega(cfg, mu, &cfg.sweep.omega, trials))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(SweepResult {
        points,
        thresholds,
        omega,
    })
}

/// Per-density coupling-width selection: run every candidate at one `Eb/N0`
/// and keep the lowest average UER (ties go to the smaller width).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaChoice {
    pub mu: f64,
    pub ebn0_db: f64,
    pub best: usize,
    /// `(omega, result)` for every admissible candidate.
    pub candidates: Vec<(usize, PointResult)>,
}

/// Smallest `Eb/N0` (dB, to `tol_db`) at which coupled SE on the point's own
/// base matrix predicts a UER of at most `target_uer`. Unlike the analytic
/// coupled threshold this sees the finite `omega` and `Lambda`. Returns
/// `None` if the target is missed at `hi_db`.
pub fn finite_base_min_ebn0(p: &Point, target_uer: f64, lo_db: f64, hi_db: f64, tol_db: f64) -> Result<Option<f64>> {
    let passes = |db: f64| -> Result<bool> {
        let se = CoupledSe::new(&p.base, &p.channel, p.mu(), sigma2_for_ebn0_db(db))?;
        let trace = se.run(&SeSettings {
            tol: 1e-7,
            max_iters: 4000,
        });
        Ok(predicted_uer(&p.channel, &trace.last().tau)? <= target_uer)
    };
    if !passes(hi_db)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (lo_db, hi_db);
    if passes(lo)? {
        return Ok(Some(lo));
    }
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Select `omega` at density `mu`. The test point is the lowest finite-base
/// SE threshold among the candidates plus `sweep.omega_margin_db`, so at
/// least one width is expected to decode there. Falls back to
/// `channel.ebn0_db` when no candidate reaches the target below 40 dB.
pub fn optimize_omega(cfg: &ExperimentConfig, mu: f64, omegas: &[usize], trials: usize) -> Result<OmegaChoice> {
    let admissible: Vec<BaseMatrix> = omegas
        .iter()
        .filter_map(|&w| cfg.base_with_omega(w).ok())
        .filter(|b| cfg.users() % b.cols() == 0)
        .collect();
    let Some(first) = admissible.first() else {
        return Err(Error::Config("no admissible coupling width among the candidates".into()));
    };
    let probe = Point::with_base(cfg, first.clone(), mu, cfg.channel.ebn0_db)?;
    let (floor_db, _) = analytic_min_ebn0(&probe, cfg.run.target_uer)?;
    let se_db = crate::par::map_slice(&admissible, |b| {
        Point::with_base(cfg, b.clone(), mu, cfg.channel.ebn0_db)
            .and_then(|p| finite_base_min_ebn0(&p, cfg.run.target_uer, floor_db.min(40.0), 40.0, 0.02))
    });
    let mut best_se: Option<f64> = None;
    for d in se_db {
        if let Some(d) = d? {
            best_se = Some(best_se.map_or(d, |b: f64| b.min(d)));
        }
    }
    let ebn0 = best_se.map_or(cfg.channel.ebn0_db, |d| d + cfg.sweep.omega_margin_db);
    let results = crate::par::map_slice(&admissible, |b| {
        Point::with_base(cfg, b.clone(), mu, ebn0).and_then(|p| run_point(&p, trials))
    });
    let mut candidates = Vec::with_capacity(admissible.len());
    for (b, r) in admissible.iter().zip(results) {
        candidates.push((b.omega(), r?));
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.1.uer_mean.total_cmp(&b.1.uer_mean).then(a.0.cmp(&b.0)))
        .map(|c| c.0)
        .expect("non-empty");
    Ok(OmegaChoice {
        mu,
        ebn0_db: ebn0,
        best,
        candidates,
    })
}

/// CSV header `mu,n,ebn0_db,trials,sections,section_errors,uer_mean,uer_se,predicted_uer,mean_iterations,diverged`.
pub fn write_points_csv<W: Write>(points: &[PointResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "mu",
        "n",
        "ebn0_db",
        "trials",
        "sections",
        "section_errors",
        "uer_mean",
        "uer_se",
        "predicted_uer",
        "mean_iterations",
        "diverged",
    ])
    .map_err(csv_err)?;
    for p in points {
        wr.write_record([
            format!("{:.6}", p.mu),
            p.n.to_string(),
            format!("{:.4}", p.ebn0_db),
            p.trials.to_string(),
            p.sections.to_string(),
            p.section_errors.to_string(),
            format!("{:.6e}", p.uer_mean),
            format!("{:.6e}", p.uer_se),
            format!("{:.6e}", p.predicted_uer),
            format!("{:.3}", p.mean_iterations),
            p.diverged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// CSV header `mu,analytic_db,analytic_reachable,empirical_db,status,trials`.
pub fn write_thresholds_csv<W: Write>(th: &[EmpiricalThreshold], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["mu", "analytic_db", "analytic_reachable", "empirical_db", "status", "trials"])
        .map_err(csv_err)?;
    for t in th {
        let status = match t.status {
            SearchStatus::Converged => "converged",
            SearchStatus::LowerCap => "lower_cap",
            SearchStatus::Unreachable => "unreachable",
            SearchStatus::NonMonotone => "non_monotone",
        };
        wr.write_record([
            format!("{:.6}", t.mu),
            format!("{:.4}", t.analytic_db),
            t.analytic_reachable.to_string(),
            format!("{:.4}", t.empirical_db),
            status.to_string(),
            t.trials.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// CSV header `mu,omega,ebn0_db,uer_mean,uer_se,selected`.
pub fn write_omega_csv<W: Write>(choices: &[OmegaChoice], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["mu", "omega", "ebn0_db", "uer_mean", "uer_se", "selected"])
        .map_err(csv_err)?;
    for c in choices {
        for (omega, r) in &c.candidates {
            wr.write_record([
                format!("{}", c.mu),
                omega.to_string(),
                format!("{:.4}", c.ebn0_db),
                format!("{:.6e}", r.uer_mean),
                format!("{:.6e}", r.uer_se),
                (*omega == c.best).to_string(),
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

    #[test]
    fn binomial_standard_error() {
        assert_eq!(binomial_mean_se(0, 1000), (0.0, 0.0));
        let (p, se) = binomial_mean_se(30, 1000);
        assert!((p - 0.03).abs() < 1e-15);
        assert!((se - (0.03f64 * 0.97 / 1000.0).sqrt()).abs() < 1e-15);
        assert_eq!(binomial_mean_se(0, 0), (0.0, 0.0));
    }

    #[test]
    fn empty_grid_gives_header_only() {
        let mut buf = Vec::new();
        write_points_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
