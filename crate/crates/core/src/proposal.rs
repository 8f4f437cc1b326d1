//! Gaussian random-walk proposal `N(theta, l^2 Sigma / d)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct ProposalSpec {
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
}

impl ProposalSpec {
    /// Proposal with the given full covariance matrix (already scaled).
    ///
    /// A zero matrix is accepted and yields the degenerate proposal that
    /// always returns the current point.
    pub fn from_covariance(covariance: DMatrix<f64>) -> Result<Self> {
        let d = covariance.nrows();
        if d == 0 || covariance.ncols() != d {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        if covariance.iter().all(|&x| x == 0.0) {
            return Ok(Self {
                cholesky: DMatrix::zeros(d, d),
                covariance,
            });
        }
        let symmetric = (&covariance + covariance.transpose()) * 0.5;
        let cholesky = symmetric.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        Ok(Self { covariance, cholesky })
    }

    /// `l^2 * sigma_p / d`, the usual optimally-scaled random walk.
    pub fn scaled(l_opt: f64, sigma_p: &DMatrix<f64>) -> Result<Self> {
        let d = sigma_p.nrows() as f64;
        Self::from_covariance(sigma_p * (l_opt * l_opt / d))
    }

    /// One-dimensional proposal with variance `var`.
    pub fn univariate(var: f64) -> Result<Self> {
        if !(var >= 0.0) || !var.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        Self::from_covariance(DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// `theta + L z` for a caller-supplied standard-normal vector `z`.
    pub fn shift(&self, theta: &ParamVector, z: &[f64]) -> ParamVector {
        let step = &self.cholesky * DVector::from_column_slice(z);
        let coords = theta.as_slice().iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        ParamVector::new(coords).expect("finite shift of a finite point")
    }
}

/// Draws a candidate from the random-walk proposal centred at `theta`.
pub fn propose(theta: &ParamVector, prop: &ProposalSpec, rng: &mut RngStream) -> ParamVector {
    let mut z = vec![0.0; prop.dim()];
    rng.fill_normal(&mut z);
    prop.shift(theta, &z)
}
