use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use gmac_amp::potential_region::{
    self, region_curve, sigma2_for_ebn0_db, EbN0Search, RegionPrior, ScanSettings, Scheme,
};
use gmac_amp::sim::{self, ExperimentConfig, Point, Preset};
use gmac_amp::state_evolution::large_payload::{
    iid_phase, parameter_choice, LargePayloadThresholds, PhaseConstants,
};
use gmac_amp::state_evolution::{CoupledSe, SeSettings};

#[derive(Parser, Debug)]
#[command(name = "gmac", version, about = "Coding and AMP decoding experiments for the many-user Gaussian MAC")]
struct Cli {
    /// TOML experiment file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides run.master_seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 = all cores (overrides run.threads)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Size defaults: desk or paper-scale (overrides the file's preset)
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Analytic minimum Eb/N0 curves and the converse over the density grid
    Region,
    /// State-evolution trace at the configured point
    Se,
    /// Monte Carlo simulation of one point
    Simulate,
    /// Grid sweep, empirical thresholds and coupling-width selection
    Sweep,
    /// Large-payload thresholds and parameter choice
    Thresholds,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Region => "region",
            Command::Se => "se",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Thresholds => "thresholds",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    parallel: bool,
    threads: usize,
    seed_scheme: &'static str,
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
    started_unix_s: u64,
    elapsed_s: f64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.preset = Preset::parse(p)?;
    }
    if let Some(s) = cli.seed {
        cfg.run.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = t;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.output.dir)
        .with_context(|| format!("creating {}", cfg.output.dir.display()))?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let cmd = cli.cmd;
    let outputs = gmac_amp::par::with_threads(cfg.run.threads, || run(cmd, &cfg))?;
    let manifest = Manifest {
        tool: "gmac",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        parallel: gmac_amp::par::is_parallel(),
        threads: cfg.run.threads,
        seed_scheme: "trial k draws design seed, messages and noise from ChaCha8(master_seed) on stream k",
        config: &cfg,
        outputs: outputs.clone(),
        started_unix_s: started,
        elapsed_s: clock.elapsed().as_secs_f64(),
    };
    let path = cfg.output.dir.join(format!("{}_manifest.json", cmd.name()));
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &manifest)?;
    for o in &outputs {
        println!("wrote {}", cfg.output.dir.join(o).display());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let dir = cfg.output.dir.as_path();
    match cmd {
        Command::Region => {
            let prior = RegionPrior {
                kind: cfg.prior.kind,
                b: cfg.prior.b,
                channel: cfg.channel_settings(),
            };
            let grid = if cfg.region.mu.is_empty() {
                default_mu_grid(cfg.prior.b)
            } else {
                cfg.region.mu.clone()
            };
            let curves = cfg
                .region
                .schemes
                .iter()
                .map(|&s| {
                    region_curve(
                        s,
                        &grid,
                        &prior,
                        cfg.run.target_uer,
                        &EbN0Search::default(),
                        &ScanSettings::default(),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            potential_region::write_region_csv(&curves, create(dir, "region.csv")?)?;
            Ok(vec!["region.csv".into()])
        }
        Command::Se => {
            let p = Point::from_config(cfg, cfg.mu(), cfg.channel.ebn0_db)?;
            let se = CoupledSe::new(&p.base, &p.channel, p.mu(), p.sigma2())?;
            let trace = se.run(&SeSettings::default());
            trace.write_csv(create(dir, "se_trace.csv")?)?;
            let last = trace.last();
            let predicted = gmac_amp::state_evolution::predicted_uer(&p.channel, &last.tau)?;
            let scan = ScanSettings::default();
            let tau_star = potential_region::tau_star(&p.channel, p.mu(), p.sigma2(), &scan)?;
            let tau_fp = potential_region::scheme_tau(Scheme::IidAmp, &p.channel, p.mu(), p.sigma2(), &scan)?;
            let mut w = csv::Writer::from_writer(create(dir, "se_summary.csv")?);
            w.write_record([
                "mu", "n", "ebn0_db", "omega", "lambda", "rho", "iterations", "converged",
                "max_tau", "mean_psi", "predicted_uer", "tau_fp_uncoupled", "tau_star",
            ])?;
            w.write_record([
                format!("{:.6}", p.mu()),
                p.n.to_string(),
                format!("{}", p.ebn0_db),
                p.base.omega().to_string(),
                p.base.lambda().to_string(),
                format!("{}", p.base.rho()),
                trace.iterations().to_string(),
                trace.converged.to_string(),
                format!("{:.10e}", last.max_tau()),
                format!("{:.10e}", last.mean_psi()),
                format!("{:.6e}", predicted),
                format!("{:.10e}", tau_fp),
                format!("{:.10e}", tau_star),
            ])?;
            w.flush()?;
            Ok(vec!["se_trace.csv".into(), "se_summary.csv".into()])
        }
        Command::Simulate => {
            let p = Point::from_config(cfg, cfg.mu(), cfg.channel.ebn0_db)?;
            let r = sim::run_point(&p, cfg.trials())?;
            sim::write_points_csv(std::slice::from_ref(&r), create(dir, "point.csv")?)?;
            let mut w = csv::Writer::from_writer(create(dir, "point_trace.csv")?);
            w.write_record(["t", "mean_empirical_mse", "se_psi_bar"])?;
            for (t, (m, s)) in r.mse_trace.iter().zip(&r.se_psi_trace).enumerate() {
                w.write_record([t.to_string(), format!("{m:.10e}"), format!("{s:.10e}")])?;
            }
            w.flush()?;
            Ok(vec!["point.csv".into(), "point_trace.csv".into()])
        }
        Command::Sweep => {
            let res = sim::sweep(cfg)?;
            sim::write_points_csv(&res.points, create(dir, "sweep.csv")?)?;
            sim::write_thresholds_csv(&res.thresholds, create(dir, "thresholds_empirical.csv")?)?;
            sim::write_omega_csv(&res.omega, create(dir, "omega.csv")?)?;
            Ok(vec![
                "sweep.csv".into(),
                "thresholds_empirical.csv".into(),
                "omega.csv".into(),
            ])
        }
        Command::Thresholds => {
            let log2_b = (cfg.prior.b as f64).log2();
            let mu = cfg.mu();
            let ebn0 = 10f64.powf(cfg.channel.ebn0_db / 10.0);
            let base = cfg.base()?;
            let t = LargePayloadThresholds::new(mu, log2_b, ebn0, base.omega(), base.lambda())?;
            let choice = parameter_choice(mu * log2_b, ebn0)?;
            let phase = iid_phase(mu, log2_b, ebn0, &PhaseConstants::default())?;
            let mut w = csv::Writer::from_writer(create(dir, "thresholds.csv")?);
            w.write_record(["quantity", "value"])?;
            let rows: Vec<(&str, String)> = vec![
                ("mu", format!("{mu}")),
                ("log2_b", format!("{log2_b}")),
                ("ebn0_db", format!("{}", cfg.channel.ebn0_db)),
                ("sigma2", format!("{:.10e}", sigma2_for_ebn0_db(cfg.channel.ebn0_db))),
                ("omega", base.omega().to_string()),
                ("lambda", base.lambda().to_string()),
                ("theta", format!("{:.10}", t.theta)),
                ("snr", format!("{:.10e}", t.snr)),
                ("spectral_efficiency", format!("{:.10}", t.spectral_efficiency)),
                ("s_amp", format!("{:.10}", t.s_amp)),
                ("s_opt", format!("{:.10}", t.s_opt)),
                ("delta", format!("{:.10e}", t.delta)),
                ("omega_star", format!("{:.10e}", t.omega_star)),
                ("rho_star", format!("{:.10e}", t.rho_star)),
                ("in_window", t.in_window.to_string()),
                ("feasible", t.feasible.to_string()),
                ("wave_iterations", format!("{}", t.wave_iterations(base.omega(), base.lambda()))),
                ("parameter_choice", serde_json::to_string(&choice)?),
                ("iid_phase", serde_json::to_string(&phase)?),
            ];
            for (k, v) in rows {
                w.write_record([k, v.as_str()])?;
            }
            w.flush()?;
            Ok(vec!["thresholds.csv".into()])
        }
    }
}

/// 30 densities spanning spectral efficiencies 0.1 to 3 bits per channel use.
fn default_mu_grid(b: usize) -> Vec<f64> {
    let bits = (b as f64).log2().max(1.0);
    (1..=30).map(|k| 0.1 * k as f64 / bits).collect()
}
