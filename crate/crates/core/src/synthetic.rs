//! Latent Gaussian model with a closed-form likelihood.
//!
//! `U_t | theta ~ N(theta, 1 / (theta^2 + 1))`, `Y_t | U_t ~ N(U_t, 1)`, so
//! `Y_t | theta ~ N(theta, (theta^2 + 2) / (theta^2 + 1))`. The prior is
//! `N(0, sigma0^2)`. Having the exact likelihood lets every pseudo-marginal
//! result be checked against plain Metropolis–Hastings and quadrature.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimateWithAux, Model};
use crate::numeric::{log_mean_exp, log_normal_pdf, LN_2PI};
use crate::param::ParamVector;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub y: Vec<f64>,
    pub gen_theta: f64,
    pub gen_seed: u64,
}

impl SyntheticData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Data from explicit observations (stub datasets in tests, ingested files).
    pub fn from_observations(y: Vec<f64>) -> Self {
        Self {
            y,
            gen_theta: f64::NAN,
            gen_seed: 0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,y")?;
        for (t, y) in self.y.iter().enumerate() {
            writeln!(w, "{},{}", t + 1, y)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let display = path.display().to_string();
        let parse_err = |line: u64, msg: String| Error::Parse {
            path: display.clone(),
            line,
            msg,
        };
        let mut y = Vec::new();
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let lineno = idx as u64 + 1;
            if idx == 0 {
                if line.trim() != "t,y" {
                    return Err(parse_err(lineno, format!("expected header \"t,y\", got {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (_, value) = line
                .split_once(',')
                .ok_or_else(|| parse_err(lineno, "expected two columns".into()))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad y value: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, "non-finite y value".into()));
            }
            y.push(v);
        }
        if y.is_empty() {
            return Err(parse_err(1, "no observations".into()));
        }
        Ok(Self::from_observations(y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Prior standard deviation.
    pub sigma0: f64,
    /// Random-walk proposal variance, `l_opt^2 * (2 / T)` with `l_opt^2 = 4`.
    pub proposal_var: f64,
}

impl SyntheticConfig {
    pub fn for_len(t: usize) -> Self {
        Self {
            sigma0: 1e5,
            proposal_var: 8.0 / t as f64,
        }
    }
}

/// Generates `t` observations under `theta_bar`, drawing standard normals
/// from `draw`.
pub fn generate_data_with(t: usize, theta_bar: f64, mut draw: impl FnMut() -> f64) -> Vec<f64> {
    let sd = 1.0 / (theta_bar * theta_bar + 1.0).sqrt();
    (0..t)
        .map(|_| {
            let u = theta_bar + sd * draw();
            u + draw()
        })
        .collect()
}

pub fn generate_data(t: usize, theta_bar: f64, seed: u64) -> SyntheticData {
    let mut rng = RngStream::new(seed, crate::rng::purpose::DATA);
    SyntheticData {
        y: generate_data_with(t, theta_bar, || rng.normal()),
        gen_theta: theta_bar,
        gen_seed: seed,
    }
}

/// Unnormalised log posterior.
pub fn exact_log_posterior(theta: f64, data: &SyntheticData, config: &SyntheticConfig) -> f64 {
    let t = data.len() as f64;
    let r = (theta * theta + 1.0) / (theta * theta + 2.0);
    let ss: f64 = data.y.iter().map(|y| (theta - y).powi(2)).sum();
    0.5 * t * r.ln() - 0.5 * (r * ss + theta * theta / (config.sigma0 * config.sigma0))
}

pub fn exact_loglik(theta: f64, data: &SyntheticData) -> f64 {
    let var = (theta * theta + 2.0) / (theta * theta + 1.0);
    data.y.iter().map(|&y| log_normal_pdf(y, theta, var)).sum()
}

/// `log E[W_1^2]` for the single-particle weight `W_1 = p_hat_1 / p`.
pub fn weight_second_moment_exact(theta: f64, data: &SyntheticData) -> f64 {
    let t = data.len() as f64;
    let q = theta * theta;
    let ss: f64 = data.y.iter().map(|y| (theta - y).powi(2)).sum();
    t * (q + 2.0).ln() - 0.5 * t * (q + 1.0).ln() - 0.5 * t * (q + 3.0).ln() + (q + 1.0) / ((q + 2.0) * (q + 3.0)) * ss
}

/// Maps a draw from `N(theta_prop, 1/(theta_prop^2+1))` to one from
/// `N(theta_hat, 1/(theta_hat^2+1))`.
pub fn recycle_transform(v: f64, theta_prop: f64, theta_hat: f64) -> f64 {
    ((theta_prop * theta_prop + 1.0) / (theta_hat * theta_hat + 1.0)).sqrt() * (v - theta_prop) + theta_hat
}

/// Importance-sampling estimator with `n` particles per observation.
pub fn is_estimator(
    theta: f64,
    theta_recycle: f64,
    n: usize,
    data: &SyntheticData,
    rng: &mut RngStream,
) -> EstimateWithAux {
    let sd = 1.0 / (theta * theta + 1.0).sqrt();
    let recycle = theta_recycle != theta;
    let scale = ((theta * theta + 1.0) / (theta_recycle * theta_recycle + 1.0)).sqrt();
    let mut z = vec![0.0; n];
    let mut primary = vec![0.0; n];
    let mut recycled = if recycle { vec![0.0; n] } else { Vec::new() };
    let mut log_lik = 0.0;
    let mut recycled_log_lik = 0.0;
    for &y in &data.y {
        rng.fill_normal(&mut z);
        for (k, &zk) in z.iter().enumerate() {
            let v = theta + sd * zk;
            let d = y - v;
            primary[k] = -0.5 * d * d;
            if recycle {
                let d = y - (scale * (v - theta) + theta_recycle);
                recycled[k] = -0.5 * d * d;
            }
        }
        log_lik += log_mean_exp(&primary);
        if recycle {
            recycled_log_lik += log_mean_exp(&recycled);
        }
    }
    let norm = 0.5 * LN_2PI * data.len() as f64;
    log_lik -= norm;
    recycled_log_lik = if recycle { recycled_log_lik - norm } else { log_lik };
    EstimateWithAux {
        log_lik,
        recycled_log_lik,
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticModel {
    pub data: SyntheticData,
    pub config: SyntheticConfig,
}

impl SyntheticModel {
    pub fn new(data: SyntheticData) -> Self {
        let config = SyntheticConfig::for_len(data.len());
        Self { data, config }
    }
}

impl Model for SyntheticModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_prior(&self, theta: &ParamVector) -> f64 {
        log_normal_pdf(theta[0], 0.0, self.config.sigma0 * self.config.sigma0)
    }

    fn exact_loglik(&self, theta: &ParamVector) -> Option<f64> {
        Some(exact_loglik(theta[0], &self.data))
    }

    fn estimate_loglik(
        &self,
        theta: &ParamVector,
        target: &ParamVector,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<EstimateWithAux> {
        theta.expect_dim(1)?;
        target.expect_dim(1)?;
        Ok(is_estimator(theta[0], target[0], n.max(1), &self.data, rng))
    }

    fn name(&self) -> &'static str {
        "synthetic"
    }
}
