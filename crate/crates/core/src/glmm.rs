//! Logistic random-intercept model.
//!
//! For subject `t` with responses `y_{t,j}` and covariates `c_{t,j}` (8 each):
//! `P(y_{t,j} = 1 | u_t) = logistic(c_{t,j}' beta + u_t)`, `u_t ~ N(0, tau)`.
//! Priors: `beta ~ N(0, 1e4 I_8)`, `tau ~ InvGamma(shape 1, scale 1.5)`.
//! Parameters are packed as `(beta_1..beta_8, tau)`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{EstimateWithAux, Model};
use crate::numeric::{log_mean_exp, log_normal_pdf, logistic, softplus};
use crate::param::ParamVector;
use crate::rng::RngStream;

pub const N_COVARIATES: usize = 8;
pub const DIM: usize = N_COVARIATES + 1;

const BETA_PRIOR_VAR: f64 = 1e4;
const TAU_SHAPE: f64 = 1.0;
const TAU_SCALE: f64 = 1.5;
const MODE_MAX_ITER: usize = 100;
const MODE_GRAD_TOL: f64 = 1e-10;

/// Default random-walk scale for the 9-dimensional model.
pub const L_OPT: f64 = 2.2;

/// Default starting point for the real-data configuration.
pub const THETA0: [f64; DIM] = [-2.788, -0.035, 0.560, -0.614, -0.173, -0.461, -0.052, 0.192, 0.944];

#[rustfmt::skip]
const SIGMA_P: [f64; DIM * DIM] = [
     0.0530,  0.0003, -0.0211,  0.0149,  0.0103, -0.0251, -0.0009, -0.0343, -0.0384,
     0.0003,  0.0001, -0.0004,  0.0000,  0.0001,  0.0001,  0.0001, -0.0003, -0.0003,
    -0.0211, -0.0004,  0.2570, -0.0103, -0.0065,  0.0112,  0.0000, -0.0094, -0.0119,
     0.0149,  0.0000, -0.0103,  0.0318,  0.0070,  0.0001,  0.0003,  0.0050, -0.0033,
     0.0103,  0.0001, -0.0065,  0.0070,  0.0321, -0.0006,  0.0004, -0.0005,  0.0000,
    -0.0251,  0.0001,  0.0112,  0.0001, -0.0006,  0.0761,  0.0002, -0.0015, -0.0075,
    -0.0009,  0.0001,  0.0000,  0.0003,  0.0004,  0.0002,  0.0008,  0.0071, -0.0011,
    -0.0343, -0.0003, -0.0094,  0.0050, -0.0005, -0.0015,  0.0071,  0.2169,  0.0064,
    -0.0384, -0.0003, -0.0119, -0.0033,  0.0000, -0.0075, -0.0011,  0.0064,  0.1348,
];

/// Default proposal shape matrix for the real-data configuration.
pub fn default_sigma_p() -> DMatrix<f64> {
    DMatrix::from_row_slice(DIM, DIM, &SIGMA_P)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub y: Vec<u8>,
    pub x: Vec<[f64; N_COVARIATES]>,
}

impl Subject {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn linear_predictors(&self, beta: &[f64]) -> Vec<f64> {
        self.x
            .iter()
            .map(|row| row.iter().zip(beta).map(|(c, b)| c * b).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmmData {
    pub subjects: Vec<Subject>,
}

impl GlmmData {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_responses(&self) -> usize {
        self.subjects.iter().map(Subject::len).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "subject,y")?;
        for k in 1..=N_COVARIATES {
            write!(w, ",x{k}")?;
        }
        writeln!(w)?;
        for s in &self.subjects {
            for (y, row) in s.y.iter().zip(&s.x) {
                write!(w, "{},{}", s.id, y)?;
                for c in row {
                    write!(w, ",{c}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Reads `subject,y,x1..x8` rows, grouping by subject id in order of
    /// first appearance and preserving row order within each subject.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let err = |line: u64, msg: String| Error::Parse {
            path: display.clone(),
            line,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| err(0, e.to_string()))?;
        let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
        let expected: Vec<String> = ["subject".to_string(), "y".to_string()]
            .into_iter()
            .chain((1..=N_COVARIATES).map(|k| format!("x{k}")))
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(err(1, format!("expected header {:?}", expected.join(","))));
        }
        let mut subjects: Vec<Subject> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                err(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != 2 + N_COVARIATES {
                return Err(err(
                    line,
                    format!("expected {} fields, got {}", 2 + N_COVARIATES, record.len()),
                ));
            }
            let id = record[0].to_string();
            let y = match &record[1] {
                "0" => 0u8,
                "1" => 1u8,
                other => return Err(err(line, format!("response must be 0 or 1, got {other:?}"))),
            };
            let mut row = [0.0; N_COVARIATES];
            for (k, slot) in row.iter_mut().enumerate() {
                let v: f64 = record[2 + k]
                    .parse()
                    .map_err(|e| err(line, format!("bad covariate x{}: {e}", k + 1)))?;
                if !v.is_finite() {
                    return Err(err(line, format!("non-finite covariate x{}", k + 1)));
                }
                *slot = v;
            }
            let slot = *index.entry(id.clone()).or_insert_with(|| {
                subjects.push(Subject {
                    id,
                    y: Vec::new(),
                    x: Vec::new(),
                });
                subjects.len() - 1
            });
            subjects[slot].y.push(y);
            subjects[slot].x.push(row);
        }
        if subjects.is_empty() {
            return Err(err(1, "no data rows".into()));
        }
        Ok(Self { subjects })
    }
}

/// Simulates a dataset: covariate 1 is an intercept column of ones, the
/// other seven are independent standard normals.
pub fn generate_glmm(
    t_subjects: usize,
    j_per: usize,
    beta_true: &[f64; N_COVARIATES],
    tau_true: f64,
    seed: u64,
) -> GlmmData {
    let mut rng = RngStream::new(seed, crate::rng::purpose::DATA);
    let subjects = (0..t_subjects)
        .map(|t| {
            let u = tau_true.sqrt() * rng.normal();
            let mut y = Vec::with_capacity(j_per);
            let mut x = Vec::with_capacity(j_per);
            for _ in 0..j_per {
                let mut row = [1.0; N_COVARIATES];
                for c in row.iter_mut().skip(1) {
                    *c = rng.normal();
                }
                let eta: f64 = row.iter().zip(beta_true).map(|(c, b)| c * b).sum::<f64>() + u;
                y.push(u8::from(rng.uniform() < logistic(eta)));
                x.push(row);
            }
            Subject {
                id: (t + 1).to_string(),
                y,
                x,
            }
        })
        .collect();
    GlmmData { subjects }
}

/// Log of the joint `g(y_t | u) f(u | tau)` kernel up to a constant:
/// `sum_j [y_j eta_j - log(1 + e^eta_j)] - u^2 / (2 tau)` with
/// `eta_j = offset_j + u`.
pub fn mode_objective(y: &[u8], offsets: &[f64], tau: f64, u: f64) -> f64 {
    y.iter()
        .zip(offsets)
        .map(|(&yj, &o)| f64::from(yj) * (o + u) - softplus(o + u))
        .sum::<f64>()
        - u * u / (2.0 * tau)
}

/// Maximiser of [`mode_objective`] by Newton's method safeguarded with
/// bisection. The score is `sum_j (y_j - logistic(eta_j)) - u / tau`, whose
/// root lies in `[-(J tau + 1), J tau + 1]`.
pub fn conditional_mode(y: &[u8], offsets: &[f64], tau: f64) -> Result<f64> {
    let bound = y.len() as f64 * tau + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    let mut u = 0.0;
    let mut last_step = hi - lo;
    for _ in 0..MODE_MAX_ITER {
        let mut grad = -u / tau;
        let mut hess = -1.0 / tau;
        for (&yj, &o) in y.iter().zip(offsets) {
            let p = logistic(o + u);
            grad += f64::from(yj) - p;
            hess -= p * (1.0 - p);
        }
        if grad.abs() < MODE_GRAD_TOL {
            return Ok(u);
        }
        if grad > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            return Ok(u);
        }
        // Newton only while it stays inside the bracket and its steps at
        // least halve; otherwise bisect. This breaks the two-cycles Newton
        // falls into on the flat tails of the logistic terms.
        let newton = u - grad / hess;
        let next = if newton > lo && newton < hi && (newton - u).abs() <= 0.5 * last_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last_step = (next - u).abs();
        u = next;
    }
    Err(Error::ModeNotConverged(MODE_MAX_ITER))
}

/// Log prior; `-inf` when `tau <= 0`.
pub fn log_prior(beta: &[f64], tau: f64) -> f64 {
    if !(tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    let beta_part: f64 = beta.iter().map(|&b| log_normal_pdf(b, 0.0, BETA_PRIOR_VAR)).sum();
    beta_part + log_inv_gamma_pdf(tau, TAU_SHAPE, TAU_SCALE)
}

/// Inverse-gamma log density for integer-free shape 1 (the only shape used):
/// `a log b - log Gamma(a) - (a + 1) log x - b / x`, with `log Gamma(1) = 0`.
fn log_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    debug_assert_eq!(shape, 1.0);
    shape * scale.ln() - (shape + 1.0) * x.ln() - scale / x
}

/// Per-subject scratch for one parameter value.
struct SubjectEval {
    offsets: Vec<f64>,
    mode: f64,
}

fn prepare(subject: &Subject, beta: &[f64], tau: f64) -> Result<SubjectEval> {
    let offsets = subject.linear_predictors(beta);
    let mode = conditional_mode(&subject.y, &offsets, tau)?;
    Ok(SubjectEval { offsets, mode })
}

/// Log importance weight of latent draw `v` for one subject.
fn log_weight(y: &[u8], eval: &SubjectEval, tau: f64, v: f64) -> f64 {
    let lik: f64 = y
        .iter()
        .zip(&eval.offsets)
        .map(|(&yj, &o)| f64::from(yj) * (o + v) - softplus(o + v))
        .sum();
    // log N(v; 0, tau) - log N(v; mode, tau)
    lik + (eval.mode * eval.mode - 2.0 * v * eval.mode) / (2.0 * tau)
}

fn split(theta: &ParamVector) -> (&[f64], f64) {
    let s = theta.as_slice();
    (&s[..N_COVARIATES], s[N_COVARIATES])
}

/// Maps a latent draw from `N(mode_prop, tau_prop)` to one from
/// `N(mode_hat, tau_hat)`.
pub fn recycle_transform(v: f64, mode_prop: f64, tau_prop: f64, mode_hat: f64, tau_hat: f64) -> f64 {
    (tau_hat / tau_prop).sqrt() * (v - mode_prop) + mode_hat
}

/// Importance-sampling estimator with proposal `N(mode_t, tau)` per subject.
pub fn is_estimator(
    theta: &ParamVector,
    theta_recycle: &ParamVector,
    n: usize,
    data: &GlmmData,
    rng: &mut RngStream,
) -> Result<EstimateWithAux> {
    let (beta, tau) = split(theta);
    let (beta_hat, tau_hat) = split(theta_recycle);
    if !(tau > 0.0) || !(tau_hat > 0.0) {
        return Err(Error::Config("estimator requires tau > 0".into()));
    }
    let recycle = theta_recycle != theta;
    let sd = tau.sqrt();
    let mut z = vec![0.0; n];
    let mut primary = vec![0.0; n];
    let mut recycled = if recycle { vec![0.0; n] } else { Vec::new() };
    let mut log_lik = 0.0;
    let mut recycled_log_lik = 0.0;
    for subject in &data.subjects {
        let eval = prepare(subject, beta, tau)?;
        let eval_hat = if recycle {
            Some(prepare(subject, beta_hat, tau_hat)?)
        } else {
            None
        };
        rng.fill_normal(&mut z);
        for (k, &zk) in z.iter().enumerate() {
            let v = eval.mode + sd * zk;
            primary[k] = log_weight(&subject.y, &eval, tau, v);
            if let Some(eh) = &eval_hat {
                let vh = recycle_transform(v, eval.mode, tau, eh.mode, tau_hat);
                recycled[k] = log_weight(&subject.y, eh, tau_hat, vh);
            }
        }
        log_lik += log_mean_exp(&primary);
        if recycle {
            recycled_log_lik += log_mean_exp(&recycled);
        }
    }
    Ok(EstimateWithAux {
        log_lik,
        recycled_log_lik: if recycle { recycled_log_lik } else { log_lik },
    })
}

#[derive(Clone, Debug)]
pub struct GlmmModel {
    pub data: GlmmData,
}

impl GlmmModel {
    pub fn new(data: GlmmData) -> Self {
        Self { data }
    }
}

impl Model for GlmmModel {
    fn dim(&self) -> usize {
        DIM
    }

    fn log_prior(&self, theta: &ParamVector) -> f64 {
        let (beta, tau) = split(theta);
        log_prior(beta, tau)
    }

    fn estimate_loglik(
        &self,
        theta: &ParamVector,
        target: &ParamVector,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<EstimateWithAux> {
        theta.expect_dim(DIM)?;
        target.expect_dim(DIM)?;
        is_estimator(theta, target, n.max(1), &self.data, rng)
    }

    fn name(&self) -> &'static str {
        "glmm"
    }
}
