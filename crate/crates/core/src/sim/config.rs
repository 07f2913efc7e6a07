//! Experiment configuration: a TOML document layered over a named preset.
//!
//! Every table and key is optional; unknown keys are rejected. See the README
//! for the full key list.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amp_decoder::{AmpOptions, StopRule, TauSource};
use crate::coupling::{BaseMatrix, OperatorKind};
use crate::error::{Error, Result};
use crate::potential_region::Scheme;
use crate::priors::{ChannelSettings, PriorKind};

/// Size defaults. `desk` fits a laptop; `paper-scale` uses the large
/// simulation sizes (`L = 500` i.i.d., `L = 5000` coupled, `Lambda = 50`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Desk,
    PaperScale,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper-scale" => Ok(Preset::PaperScale),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}` (expected `desk` or `paper-scale`)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::PaperScale => "paper-scale",
        }
    }

    pub fn users(self, coupled: bool) -> usize {
        match (self, coupled) {
            (_, false) => 500,
            (Preset::Desk, true) => 1000,
            (Preset::PaperScale, true) => 5000,
        }
    }

    pub fn lambda(self) -> usize {
        match self {
            Preset::Desk => 20,
            Preset::PaperScale => 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    Iid,
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    /// Dense Gaussian when it fits in [`AUTO_DENSE_LIMIT`] entries, else DCT.
    #[default]
    Auto,
    DenseGaussian,
    StructuredDct,
}

/// Largest dense design (entries) `auto` will pick.
pub const AUTO_DENSE_LIMIT: usize = 1 << 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Section length `B`.
    pub b: usize,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            kind: PriorKind::Flat,
            b: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub omega: Option<usize>,
    pub lambda: Option<usize>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSpec {
    /// Number of users `L`; defaults from the preset.
    pub users: Option<usize>,
    /// User density; `n` becomes the multiple of `R` nearest `L / mu`.
    pub mu: Option<f64>,
    /// Code length; overrides `mu`.
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    pub ebn0_db: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self { ebn0_db: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSpec {
    pub operator: OperatorChoice,
    pub stop: StopRule,
    pub max_iters: usize,
    pub onsager: bool,
    pub tau_source: TauSource,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        let d = AmpOptions::default();
        Self {
            operator: OperatorChoice::Auto,
            stop: d.stop,
            max_iters: d.max_iters,
            onsager: d.onsager,
            tau_source: d.tau_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    /// Trials per point; defaults to enough sections (`1e5`) for a binomial
    /// standard error of `1e-4` at a UER of `1e-3`.
    pub trials: Option<usize>,
    pub master_seed: u64,
    pub target_uer: f64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            trials: None,
            master_seed: 0,
            target_uer: 1e-3,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSpec {
    /// Monte Carlo draws per MMSE grid point; 0 = size-dependent default.
    pub mmse_samples: usize,
    pub mmse_seed: u64,
}

impl Default for TableSpec {
    fn default() -> Self {
        let d = ChannelSettings::default();
        Self {
            mmse_samples: d.samples,
            mmse_seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub mu: Vec<f64>,
    pub ebn0_db: Vec<f64>,
    /// Search the empirical minimum `Eb/N0` at each `mu`.
    pub bisect: bool,
    pub tol_db: f64,
    /// Candidate coupling widths; non-empty turns on per-`mu` selection.
    pub omega: Vec<usize>,
    /// Selection runs this far above the best candidate's coupled SE threshold.
    pub omega_margin_db: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            mu: Vec::new(),
            ebn0_db: Vec::new(),
            bisect: false,
            tol_db: 0.1,
            omega: Vec::new(),
            omega_margin_db: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSpec {
    pub mu: Vec<f64>,
    pub schemes: Vec<Scheme>,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self {
            mu: Vec::new(),
            schemes: vec![Scheme::IidAmp, Scheme::ScAmp, Scheme::Converse],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub prior: PriorSpec,
    pub scheme: SchemeSpec,
    pub system: SystemSpec,
    pub channel: ChannelSpec,
    pub decoder: DecoderSpec,
    pub run: RunSpec,
    pub tables: TableSpec,
    pub sweep: SweepSpec,
    pub region: RegionSpec,
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn coupled(&self) -> bool {
        self.scheme.kind == SchemeKind::Sc
    }

    pub fn users(&self) -> usize {
        self.system
            .users
            .unwrap_or_else(|| self.preset.users(self.coupled()))
    }

    pub fn base(&self) -> Result<BaseMatrix> {
        self.base_with_omega(self.scheme.omega.unwrap_or(5))
    }

    pub fn base_with_omega(&self, omega: usize) -> Result<BaseMatrix> {
        if !self.coupled() {
            return Ok(BaseMatrix::trivial());
        }
        let lambda = self.scheme.lambda.unwrap_or_else(|| self.preset.lambda());
        BaseMatrix::new(omega, lambda, self.scheme.rho.unwrap_or(0.0))
    }

    pub fn trials(&self) -> usize {
        self.run
            .trials
            .unwrap_or_else(|| 100_000usize.div_ceil(self.users()))
    }

    /// `mu` from the config (or `L / n` when `n` is given).
    pub fn mu(&self) -> f64 {
        match (self.system.n, self.system.mu) {
            (Some(n), _) => self.users() as f64 / n as f64,
            (None, Some(mu)) => mu,
            (None, None) => 0.5,
        }
    }

    pub fn channel_settings(&self) -> ChannelSettings {
        ChannelSettings {
            samples: self.tables.mmse_samples,
            seed: self.tables.mmse_seed,
            ..ChannelSettings::default()
        }
    }

    pub fn amp_options(&self) -> AmpOptions {
        AmpOptions {
            stop: self.decoder.stop,
            max_iters: self.decoder.max_iters,
            onsager: self.decoder.onsager,
            tau_source: self.decoder.tau_source,
            ..AmpOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        let b = self.prior.b;
        if b == 0 || !b.is_power_of_two() {
            return cfg_err(format!("prior.b must be a power of two, got {b}"));
        }
        if self.users() == 0 {
            return cfg_err("system.users must be positive".into());
        }
        if let Some(mu) = self.system.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return cfg_err(format!("system.mu must be positive, got {mu}"));
            }
        }
        if self.system.n == Some(0) {
            return cfg_err("system.n must be positive".into());
        }
        if self.run.trials == Some(0) {
            return cfg_err("run.trials must be at least 1".into());
        }
        if !(self.run.target_uer > 0.0 && self.run.target_uer < 1.0) {
            return cfg_err(format!("run.target_uer must lie in (0, 1), got {}", self.run.target_uer));
        }
        if !(self.sweep.tol_db > 0.0) {
            return cfg_err("sweep.tol_db must be positive".into());
        }
        if self.decoder.max_iters == 0 {
            return cfg_err("decoder.max_iters must be positive".into());
        }
        if self.sweep.mu.iter().chain(&self.region.mu).any(|&m| !(m > 0.0)) {
            return cfg_err("density grids must be positive".into());
        }
        let base = self.base().map_err(|e| Error::Config(e.to_string()))?;
        let l = self.users();
        if l % base.cols() != 0 {
            return cfg_err(format!("system.users = {l} must be divisible by Lambda = {}", base.cols()));
        }
        if let Some(n) = self.system.n {
            if n % base.rows() != 0 {
                return cfg_err(format!("system.n = {n} must be a multiple of R = {}", base.rows()));
            }
        }
        Ok(())
    }
}

/// The multiple of `rows` nearest `l / mu` (at least `rows`).
pub fn code_length(l: usize, mu: f64, rows: usize) -> usize {
    let r = rows as f64;
    let k = (l as f64 / (mu * r)).round().max(1.0);
    k as usize * rows
}

/// Resolve the operator choice for an `n x cols` design.
pub fn resolve_operator(choice: OperatorChoice, n: usize, cols: usize) -> OperatorKind {
    match choice {
        OperatorChoice::DenseGaussian => OperatorKind::DenseGaussian,
        OperatorChoice::StructuredDct => OperatorKind::StructuredDct,
        OperatorChoice::Auto => {
            if n.saturating_mul(cols) <= AUTO_DENSE_LIMIT {
                OperatorKind::DenseGaussian
            } else {
                OperatorKind::StructuredDct
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_the_other_defaults() {
        let c = ExperimentConfig::from_toml_str("[prior]\nb = 8\n[channel]\n[scheme]\nomega = 3\n").unwrap();
        assert_eq!(c.prior.b, 8);
        assert_eq!(c.prior.kind, PriorSpec::default().kind);
        assert_eq!(c.channel, ChannelSpec::default());
        assert_eq!(c.scheme.omega, Some(3));
    }

    #[test]
    fn empty_document_is_the_desk_default() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.users(), 500);
        assert_eq!(c.trials(), 200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[prior]\nkind = \"flat\"\nb = 4\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("typo = 3\n").is_err());
    }

    #[test]
    fn parses_a_full_document() {
        let text = r#"
preset = "paper-scale"
[prior]
kind = "binary_modulated"
b = 128
[scheme]
kind = "sc"
omega = 6
rho = 0.0
[system]
mu = 0.25
[decoder]
operator = "structured_dct"
stop = { rule = "fixed_t", t = 40 }
[run]
trials = 3
master_seed = 9
[sweep]
mu = [0.2, 0.3]
omega = [4, 5, 6]
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.users(), 5000);
        let base = c.base().unwrap();
        assert_eq!((base.rows(), base.cols()), (55, 50));
        assert_eq!(c.amp_options().stop, StopRule::FixedT { t: 40 });
        // round trip
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn validation_errors() {
        assert!(ExperimentConfig::from_toml_str("[prior]\nkind = \"flat\"\nb = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[run]\ntrials = 0\n").is_err());
        // 999 users cannot be split over 20 column blocks
        assert!(ExperimentConfig::from_toml_str("[scheme]\nkind = \"sc\"\n[system]\nusers = 999\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[scheme]\nkind = \"sc\"\nomega = 11\n").is_err());
    }

    #[test]
    fn code_length_rounds_to_row_multiples() {
        assert_eq!(code_length(1024, 0.7, 1), 1463);
        assert_eq!(code_length(1000, 1.0, 27), 999);
        assert_eq!(code_length(10, 100.0, 3), 3);
    }
}
