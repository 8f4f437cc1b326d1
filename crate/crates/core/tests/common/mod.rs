//! Independent numerical oracles shared by the integration tests and the
//! acceptance runner. Nothing here calls into the library's likelihood code.

#![allow(dead_code)]

use std::f64::consts::PI;

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, fa, m, fm, lm, flm, left, eps / 2.0, depth - 1)
        + simpson_step(f, m, fm, b, fb, rm, frm, right, eps / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `eps`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    // Start from 64 panels so narrow peaks are not missed by the first probe.
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let m = 0.5 * (lo + hi);
            let (fa, fb, fm) = (f(lo), f(hi), f(m));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(&f, lo, fa, hi, fb, m, fm, whole, eps / panels as f64, 40)
        })
        .sum()
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// Log posterior of the latent Gaussian model written out from its
/// marginal `y_t ~ N(theta, (theta^2 + 2) / (theta^2 + 1))`.
pub fn synthetic_log_post(theta: f64, y: &[f64], sigma0: f64) -> f64 {
    let var = (theta * theta + 2.0) / (theta * theta + 1.0);
    y.iter().map(|&yt| ln_normal(yt, theta, var)).sum::<f64>() + ln_normal(theta, 0.0, sigma0 * sigma0)
}

/// Posterior mean and variance by quadrature.
pub fn synthetic_posterior_moments(y: &[f64], sigma0: f64) -> (f64, f64) {
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let scale = (4.0 / y.len() as f64).sqrt();
    let (a, b) = (ybar - 40.0 * scale, ybar + 40.0 * scale);
    let peak = (0..=4000)
        .map(|i| synthetic_log_post(a + (b - a) * i as f64 / 4000.0, y, sigma0))
        .fold(f64::NEG_INFINITY, f64::max);
    let dens = |t: f64| (synthetic_log_post(t, y, sigma0) - peak).exp();
    let z = adaptive_simpson(dens, a, b, 1e-13);
    let m1 = adaptive_simpson(|t| t * dens(t), a, b, 1e-13) / z;
    let m2 = adaptive_simpson(|t| (t - m1) * (t - m1) * dens(t), a, b, 1e-14) / z;
    (m1, m2)
}

/// Exact synthetic log-likelihood.
pub fn synthetic_loglik(theta: f64, y: &[f64]) -> f64 {
    let var = (theta * theta + 2.0) / (theta * theta + 1.0);
    y.iter().map(|&yt| ln_normal(yt, theta, var)).sum()
}

/// GLMM log-likelihood by integrating each subject's random intercept.
pub fn glmm_loglik(subjects: &[(Vec<u8>, Vec<[f64; 8]>)], beta: &[f64], tau: f64) -> f64 {
    subjects
        .iter()
        .map(|(y, x)| {
            let eta: Vec<f64> = x
                .iter()
                .map(|row| row.iter().zip(beta).map(|(c, b)| c * b).sum())
                .collect();
            let integrand = |u: f64| {
                let mut lp = ln_normal(u, 0.0, tau);
                for (&yj, &e) in y.iter().zip(&eta) {
                    let p = 1.0 / (1.0 + (-(e + u)).exp());
                    lp += if yj == 1 { p.ln() } else { (1.0 - p).ln() };
                }
                lp.exp()
            };
            let r = 12.0 * tau.sqrt();
            adaptive_simpson(integrand, -r, r, 1e-14).ln()
        })
        .sum()
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Fixed five-point dataset used where a short, known series is needed.
pub const STUB5: [f64; 5] = [-0.8, -0.3, 0.1, 0.4, 1.2];
