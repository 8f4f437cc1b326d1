//! Experiment configuration.
//!
//! The file is TOML with top-level run settings and `[model]`, `[adapt]`,
//! `[tune]`, `[proposal]` and `[diagnostics]` sections. Unset optional keys
//! fall back to model-dependent defaults through the `resolved_*` accessors,
//! so a file round-trips exactly as written.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{AdaptConfig, ProbSchedule};
use crate::error::{Error, Result};
use crate::glmm;
use crate::tuner::TuneConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Mh,
    Pm,
    Apm,
    Tune,
    Compare,
    GenData,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mh => "mh",
            Mode::Pm => "pm",
            Mode::Apm => "apm",
            Mode::Tune => "tune",
            Mode::Compare => "compare",
            Mode::GenData => "gen-data",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Synthetic,
    Glmm,
}

impl ModelKind {
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Synthetic => 1,
            ModelKind::Glmm => glmm::DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Read data from this file instead of generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    // synthetic
    #[serde(default = "default_t_obs")]
    pub t_obs: usize,
    #[serde(default)]
    pub theta_bar: f64,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    // glmm
    #[serde(default = "default_subjects")]
    pub subjects: usize,
    #[serde(default = "default_per_subject")]
    pub per_subject: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_true: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    #[serde(default = "default_epoch_size")]
    pub epoch_size: usize,
    #[serde(default = "default_step_size")]
    pub step_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_opt: Option<f64>,
    #[serde(default = "default_sigma_tol")]
    pub sigma_tol: f64,
    #[serde(default = "default_schedule")]
    pub schedule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    #[serde(default = "default_prelim_iters")]
    pub prelim_iters: u64,
    #[serde(default = "default_mc_iters")]
    pub mc_iters: usize,
    #[serde(default = "default_search_lo")]
    pub search_lo: usize,
    #[serde(default = "default_search_hi")]
    pub search_hi: usize,
    #[serde(default = "default_precision")]
    pub precision: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_opt: Option<f64>,
    /// Proposal shape matrix, row by row. The covariance is `l_opt^2 sigma_p / d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_p: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// OBM batch size; `floor(sqrt(n))` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default = "default_acf_lags")]
    pub acf_lags: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_frac: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub model: ModelSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub proposal: ProposalSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

fn default_data_seed() -> u64 {
    7
}
fn default_t_obs() -> usize {
    200
}
fn default_sigma0() -> f64 {
    1e5
}
fn default_subjects() -> usize {
    30
}
fn default_per_subject() -> usize {
    4
}
fn default_epoch_size() -> usize {
    100
}
fn default_step_size() -> usize {
    1
}
fn default_sigma_tol() -> f64 {
    0.015
}
fn default_schedule() -> String {
    "inv-sqrt".into()
}
fn default_prelim_iters() -> u64 {
    10_000
}
fn default_mc_iters() -> usize {
    10_000
}
fn default_search_lo() -> usize {
    100
}
fn default_search_hi() -> usize {
    1000
}
fn default_precision() -> usize {
    1
}
fn default_acf_lags() -> usize {
    50
}
fn default_runs() -> usize {
    1
}
fn default_n_init() -> usize {
    100
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_jobs() -> usize {
    1
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            prelim_iters: default_prelim_iters(),
            mc_iters: default_mc_iters(),
            search_lo: default_search_lo(),
            search_hi: default_search_hi(),
            precision: default_precision(),
        }
    }
}

impl Default for AdaptSection {
    fn default() -> Self {
        Self {
            epoch_size: default_epoch_size(),
            step_size: default_step_size(),
            sigma_opt: None,
            sigma_tol: default_sigma_tol(),
            schedule: default_schedule(),
        }
    }
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            batch_size: None,
            acf_lags: default_acf_lags(),
        }
    }
}

impl ModelSection {
    pub fn synthetic(t_obs: usize, data_seed: u64) -> Self {
        Self {
            kind: ModelKind::Synthetic,
            data_path: None,
            data_seed,
            t_obs,
            theta_bar: 0.0,
            sigma0: default_sigma0(),
            subjects: default_subjects(),
            per_subject: default_per_subject(),
            beta_true: None,
            tau_true: None,
        }
    }

    pub fn glmm(subjects: usize, per_subject: usize, data_seed: u64) -> Self {
        Self {
            kind: ModelKind::Glmm,
            subjects,
            per_subject,
            ..Self::synthetic(default_t_obs(), data_seed)
        }
    }

    /// Generating coefficients for simulated GLMM data.
    pub fn resolved_beta_true(&self) -> Result<[f64; glmm::N_COVARIATES]> {
        match &self.beta_true {
            None => {
                let mut b = [0.0; glmm::N_COVARIATES];
                b.copy_from_slice(&glmm::THETA0[..glmm::N_COVARIATES]);
                Ok(b)
            }
            Some(v) => v.as_slice().try_into().map_err(|_| {
                Error::Config(format!(
                    "model.beta_true needs {} entries, got {}",
                    glmm::N_COVARIATES,
                    v.len()
                ))
            }),
        }
    }

    pub fn resolved_tau_true(&self) -> f64 {
        self.tau_true.unwrap_or(glmm::THETA0[glmm::N_COVARIATES])
    }
}

/// Noise levels tabulated for the supported parameter dimensions.
pub fn tabulated_sigma_opt(d: usize) -> Result<f64> {
    match d {
        1 => Ok(1.16),
        9 => Ok(1.44),
        d => Err(Error::Config(format!(
            "no tabulated sigma_opt for d = {d}; set adapt.sigma_opt"
        ))),
    }
}

impl ExperimentConfig {
    /// A minimal configuration with every section at its default.
    pub fn new(mode: Mode, iterations: u64, model: ModelSection) -> Self {
        Self {
            mode,
            iterations,
            burn_in_frac: None,
            seed: 0,
            runs: default_runs(),
            n_init: default_n_init(),
            output_dir: default_output_dir(),
            jobs: default_jobs(),
            model,
            adapt: AdaptSection::default(),
            tune: TuneSection::default(),
            proposal: ProposalSection::default(),
            diagnostics: DiagnosticsSection::default(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// First 12 hex digits of the SHA-256 of the canonical serialisation.
    /// `jobs` and `output_dir` do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.jobs = default_jobs();
        canonical.output_dir = default_output_dir();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn dim(&self) -> usize {
        self.model.kind.dim()
    }

    pub fn resolved_burn_in_frac(&self) -> f64 {
        self.burn_in_frac.unwrap_or(match self.model.kind {
            ModelKind::Synthetic => 0.2,
            ModelKind::Glmm => 0.4,
        })
    }

    pub fn burn_in(&self) -> u64 {
        (self.iterations as f64 * self.resolved_burn_in_frac()).floor() as u64
    }

    /// Target noise level: 1.16 for d = 1 and 1.44 for d = 9 unless set.
    pub fn resolved_sigma_opt(&self) -> Result<f64> {
        match self.adapt.sigma_opt {
            Some(s) => Ok(s),
            None => tabulated_sigma_opt(self.dim()),
        }
    }

    pub fn resolved_l_opt(&self) -> f64 {
        self.proposal.l_opt.unwrap_or(match self.model.kind {
            ModelKind::Synthetic => 2.0,
            ModelKind::Glmm => glmm::L_OPT,
        })
    }

    /// Proposal shape matrix before the `l_opt^2 / d` scaling. For the
    /// synthetic model the default gives the variance `8 / T`.
    pub fn resolved_sigma_p(&self, t_obs: usize) -> Result<DMatrix<f64>> {
        let d = self.dim();
        match &self.proposal.sigma_p {
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Config(format!("proposal.sigma_p must be {d}x{d}")));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
            None => Ok(match self.model.kind {
                ModelKind::Synthetic => DMatrix::from_element(1, 1, 2.0 / t_obs as f64),
                ModelKind::Glmm => glmm::default_sigma_p(),
            }),
        }
    }

    pub fn resolved_theta0(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        match &self.proposal.theta0 {
            Some(v) if v.len() == d => Ok(v.clone()),
            Some(v) => Err(Error::Config(format!(
                "proposal.theta0 needs {d} entries, got {}",
                v.len()
            ))),
            None => Ok(match self.model.kind {
                ModelKind::Synthetic => vec![0.0],
                ModelKind::Glmm => glmm::THETA0.to_vec(),
            }),
        }
    }

    pub fn adapt_config(&self) -> Result<AdaptConfig> {
        let cfg = AdaptConfig {
            epoch_size: self.adapt.epoch_size,
            step_size: self.adapt.step_size,
            sigma_opt: self.resolved_sigma_opt()?,
            sigma_tol: self.adapt.sigma_tol,
            schedule: ProbSchedule::parse(&self.adapt.schedule)?,
            n_init: self.n_init,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tune_config(&self) -> Result<TuneConfig> {
        let cfg = TuneConfig {
            n_init: self.n_init,
            prelim_iters: self.tune.prelim_iters,
            mc_iters: self.tune.mc_iters,
            search_lo: self.tune.search_lo,
            search_hi: self.tune.search_hi,
            precision: self.tune.precision,
            sigma_opt: self.resolved_sigma_opt()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 && self.mode != Mode::GenData {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.runs == 0 || self.jobs == 0 || self.n_init == 0 {
            return Err(Error::Config("runs, jobs and n_init must be positive".into()));
        }
        let frac = self.resolved_burn_in_frac();
        if !(0.0..1.0).contains(&frac) {
            return Err(Error::Config(format!("burn_in_frac {frac} must lie in [0, 1)")));
        }
        if self.mode == Mode::Mh && self.model.kind == ModelKind::Glmm {
            return Err(Error::Config(
                "mode mh needs an exact likelihood, which the glmm model does not have".into(),
            ));
        }
        if self.model.kind == ModelKind::Synthetic && self.model.t_obs == 0 {
            return Err(Error::Config("model.t_obs must be positive".into()));
        }
        if self.model.kind == ModelKind::Glmm {
            if self.model.subjects == 0 || self.model.per_subject == 0 {
                return Err(Error::Config(
                    "model.subjects and model.per_subject must be positive".into(),
                ));
            }
            self.model.resolved_beta_true()?;
            if !(self.model.resolved_tau_true() > 0.0) {
                return Err(Error::Config("model.tau_true must be positive".into()));
            }
        }
        if !(self.resolved_l_opt() > 0.0) {
            return Err(Error::Config("proposal.l_opt must be positive".into()));
        }
        self.resolved_theta0()?;
        self.resolved_sigma_p(self.model.t_obs)?;
        match self.mode {
            Mode::Apm | Mode::Compare => {
                self.adapt_config()?;
            }
            Mode::Tune => {
                self.tune_config()?;
            }
            _ => {}
        }
        if self.mode == Mode::Compare {
            self.tune_config()?;
        }
        Ok(())
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}
