mod common;

use common::{glmm_loglik, mean_se, synthetic_loglik, STUB5};
use pmadapt::glmm::{generate_glmm, GlmmData, GlmmModel, Subject};
use pmadapt::synthetic::{SyntheticData, SyntheticModel};
use pmadapt::{Model, ParamVector, RngStream};

fn ratio_stats(model: &dyn Model, theta: &ParamVector, n: usize, exact: f64, reps: usize, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::new(seed, 0);
    let ratios: Vec<f64> = (0..reps)
        .map(|_| {
            let est = model.estimate_loglik(theta, theta, n, &mut rng).unwrap();
            (est.log_lik - exact).exp()
        })
        .collect();
    mean_se(&ratios)
}

fn tiny_glmm() -> GlmmData {
    let beta = [0.3, -0.5, 0.2, 0.0, 0.1, 0.0, -0.2, 0.4];
    generate_glmm(3, 2, &beta, 1.2, 17)
}

fn as_tuples(data: &GlmmData) -> Vec<(Vec<u8>, Vec<[f64; 8]>)> {
    data.subjects.iter().map(|s| (s.y.clone(), s.x.clone())).collect()
}

#[test]
fn synthetic_estimator_is_unbiased() {
    let model = SyntheticModel::new(SyntheticData::from_observations(STUB5.to_vec()));
    for (k, &theta) in [0.0, 0.5].iter().enumerate() {
        let exact = synthetic_loglik(theta, &STUB5);
        for (i, &n) in [1usize, 10, 100].iter().enumerate() {
            let (m, se) = ratio_stats(
                &model,
                &ParamVector::scalar(theta),
                n,
                exact,
                100_000,
                (10 * k + i) as u64,
            );
            assert!((m - 1.0).abs() < 3.0 * se, "theta {theta} N {n}: mean {m} se {se}");
        }
    }
}

#[test]
fn glmm_estimator_is_unbiased_on_tiny_data() {
    let data = tiny_glmm();
    let beta = [0.3, -0.5, 0.2, 0.0, 0.1, 0.0, -0.2, 0.4];
    let tau = 1.2;
    let exact = glmm_loglik(&as_tuples(&data), &beta, tau);
    let mut theta = beta.to_vec();
    theta.push(tau);
    let model = GlmmModel::new(data);
    let (m, se) = ratio_stats(&model, &ParamVector::new(theta).unwrap(), 5, exact, 100_000, 3);
    assert!((m - 1.0).abs() < 3.0 * se, "mean {m} se {se}");
}

#[test]
fn glmm_many_particles_match_quadrature() {
    let data = tiny_glmm();
    let beta = [0.1, 0.2, -0.3, 0.0, 0.5, 0.0, 0.0, -0.1];
    let tau = 0.7;
    let exact = glmm_loglik(&as_tuples(&data), &beta, tau);
    let mut theta = beta.to_vec();
    theta.push(tau);
    let theta = ParamVector::new(theta).unwrap();
    let est = GlmmModel::new(data)
        .estimate_loglik(&theta, &theta, 100_000, &mut RngStream::new(5, 5))
        .unwrap();
    assert!((est.log_lik - exact).abs() < 0.02, "{} vs {exact}", est.log_lik);
}

#[test]
fn prior_only_subject_has_zero_mode() {
    let u = pmadapt::glmm::conditional_mode(&[], &[], 2.5).unwrap();
    assert_eq!(u, 0.0);
}

/// Recycled estimates at `target` must have the law of fresh estimates
/// there: compare means and standard deviations.
fn check_recycled_law(model: &dyn Model, proposal: &ParamVector, target: &ParamVector, n: usize, reps: usize) {
    let mut rng = RngStream::new(41, 0);
    let recycled: Vec<f64> = (0..reps)
        .map(|_| {
            model
                .estimate_loglik(proposal, target, n, &mut rng)
                .unwrap()
                .recycled_log_lik
        })
        .collect();
    let fresh: Vec<f64> = (0..reps)
        .map(|_| model.estimate_loglik(target, target, n, &mut rng).unwrap().log_lik)
        .collect();
    let (mr, ser) = mean_se(&recycled);
    let (mf, sef) = mean_se(&fresh);
    let combined = (ser * ser + sef * sef).sqrt();
    assert!((mr - mf).abs() < 3.0 * combined, "means {mr} vs {mf} (se {combined})");
    let sd_r = ser * (reps as f64).sqrt();
    let sd_f = sef * (reps as f64).sqrt();
    // The SE of each sample SD is under 1% here even with the heavy left
    // tail of log-likelihood noise.
    assert!((sd_r / sd_f - 1.0).abs() < 0.05, "sds {sd_r} vs {sd_f}");
}

#[test]
fn synthetic_recycled_estimates_follow_target_law() {
    let model = SyntheticModel::new(SyntheticData::from_observations(STUB5.to_vec()));
    check_recycled_law(&model, &ParamVector::scalar(1.0), &ParamVector::scalar(0.0), 3, 40_000);
}

#[test]
fn glmm_recycled_estimates_follow_target_law() {
    let data = tiny_glmm();
    let model = GlmmModel::new(data);
    let a = ParamVector::new(vec![0.3, -0.5, 0.2, 0.0, 0.1, 0.0, -0.2, 0.4, 1.2]).unwrap();
    let b = ParamVector::new(vec![0.0, -0.2, 0.5, 0.1, 0.1, 0.0, -0.1, 0.2, 2.0]).unwrap();
    check_recycled_law(&model, &b, &a, 2, 40_000);
}

#[test]
fn estimates_are_pure_given_the_stream() {
    let synth = SyntheticModel::new(SyntheticData::from_observations(STUB5.to_vec()));
    let glmm = GlmmModel::new(tiny_glmm());
    let g = ParamVector::new(vec![0.3, -0.5, 0.2, 0.0, 0.1, 0.0, -0.2, 0.4, 1.2]).unwrap();
    let g2 = ParamVector::new(vec![0.2, -0.5, 0.2, 0.0, 0.1, 0.0, -0.2, 0.4, 1.5]).unwrap();
    let cases: [(&dyn Model, ParamVector, ParamVector); 2] = [
        (&synth, ParamVector::scalar(0.2), ParamVector::scalar(-0.1)),
        (&glmm, g, g2),
    ];
    for (model, a, b) in cases {
        let x = model.estimate_loglik(&a, &b, 7, &mut RngStream::new(9, 1)).unwrap();
        let y = model.estimate_loglik(&a, &b, 7, &mut RngStream::new(9, 1)).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn glmm_subjects_with_single_row() {
    let data = GlmmData {
        subjects: vec![Subject {
            id: "a".into(),
            y: vec![1],
            x: vec![[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
        }],
    };
    let exact = glmm_loglik(&as_tuples(&data), &[0.0; 8], 1.0);
    let mut theta = vec![0.0; 8];
    theta.push(1.0);
    let theta = ParamVector::new(theta).unwrap();
    let est = GlmmModel::new(data)
        .estimate_loglik(&theta, &theta, 200_000, &mut RngStream::new(2, 2))
        .unwrap();
    // By symmetry of the logistic around zero, P(y = 1) = 1/2 exactly.
    assert!((exact - 0.5f64.ln()).abs() < 1e-10);
    assert!((est.log_lik - exact).abs() < 0.01);
}
