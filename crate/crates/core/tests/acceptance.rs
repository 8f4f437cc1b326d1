//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Run with `cargo test -p pmadapt-core --test acceptance`.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use common::{glmm_loglik, mean_se, synthetic_loglik, synthetic_posterior_moments, STUB5};
use pmadapt::adaptation::{AdaptConfig, ProbSchedule};
use pmadapt::config::ModelSection;
use pmadapt::diagnostics::{esm, geweke_z, mcse, obm_if};
use pmadapt::experiment::Dataset;
use pmadapt::glmm::{self, generate_glmm, GlmmModel};
use pmadapt::kernel::ChainRun;
use pmadapt::proposal::ProposalSpec;
use pmadapt::samplers::{run_apm, run_exact_mh, run_pm};
use pmadapt::synthetic::{generate_data, weight_second_moment_exact, SyntheticData, SyntheticModel};
use pmadapt::trace::{CsvTraceSink, NullSink};
use pmadapt::tuner::{dichotomic_search_with, run_pipeline, sample_covariance, sigma_n_mc, PipelineReport, TuneConfig};
use pmadapt::{EstimateWithAux, Model, ParamVector, Result, RngStream};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

const SEED: u64 = 20_240_601;
const T_OBS: usize = 200;
const DATA_SEED: u64 = 7;
const ITERS: u64 = 200_000;
const BURN: u64 = ITERS / 5;

type SyntheticCheck = fn(&SyntheticRuns) -> Result<Outcome>;
type Check = fn() -> Result<Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
    seconds: f64,
    limit_s: Option<f64>,
}

fn outcome(pass: bool, detail: String, start: Instant, limit_s: Option<f64>) -> Outcome {
    let seconds = start.elapsed().as_secs_f64();
    Outcome {
        pass: pass && limit_s.is_none_or(|l| seconds < l),
        detail,
        seconds,
        limit_s,
    }
}

fn post_burn(run: &ChainRun, burn: u64) -> Vec<f64> {
    run.coordinate(0).split_off(burn as usize)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Synthetic runs shared by criteria 1 to 4.
struct SyntheticRuns {
    model: SyntheticModel,
    quad_mean: f64,
    quad_var: f64,
    mh: ChainRun,
    mh_s: f64,
    pm: ChainRun,
    pm_report: PipelineReport,
    pm_s: f64,
    apm: ChainRun,
    apm_s: f64,
}

fn synthetic_runs() -> Result<SyntheticRuns> {
    let data = generate_data(T_OBS, 0.0, DATA_SEED);
    let (quad_mean, quad_var) = synthetic_posterior_moments(&data.y, 1e5);
    let model = SyntheticModel::new(data);
    let prop = ProposalSpec::univariate(8.0 / T_OBS as f64)?;
    let theta0 = ParamVector::scalar(0.0);
    let rng = RngStream::new(SEED, 0);

    let t = Instant::now();
    let mh = run_exact_mh(&model, &theta0, &prop, ITERS, &mut NullSink, &rng)?;
    let mh_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let tune = TuneConfig {
        n_init: 100,
        prelim_iters: 10_000,
        mc_iters: 10_000,
        search_lo: 100,
        search_hi: 1000,
        precision: 1,
        sigma_opt: 1.16,
    };
    let (pm_report, pm) = run_pipeline(
        &model,
        &theta0,
        &prop,
        2.0,
        &tune,
        ITERS,
        BURN,
        100,
        &mut NullSink,
        &rng,
    )?;
    let pm_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let apm = run_apm(
        &model,
        &theta0,
        &prop,
        &AdaptConfig::new(1.16, 100),
        ITERS,
        &mut NullSink,
        &rng,
    )?;
    let apm_s = t.elapsed().as_secs_f64();

    Ok(SyntheticRuns {
        model,
        quad_mean,
        quad_var,
        mh,
        mh_s,
        pm,
        pm_report,
        pm_s,
        apm,
        apm_s,
    })
}

fn criterion1(s: &SyntheticRuns) -> Result<Outcome> {
    let start = Instant::now();
    let x = post_burn(&s.mh, BURN);
    let m = mean(&x);
    let se_m = mcse(&x, None)?;
    let sq: Vec<f64> = x.iter().map(|v| (v - s.quad_mean).powi(2)).collect();
    let v = mean(&sq);
    let se_v = mcse(&sq, None)?;
    let pass = (m - s.quad_mean).abs() < 3.0 * se_m && (v - s.quad_var).abs() < 3.0 * se_v;
    let mut o = outcome(
        pass,
        format!(
            "mean {m:.5} vs {:.5} (3se {:.5}), var {v:.6} vs {:.6} (3se {:.6})",
            s.quad_mean,
            3.0 * se_m,
            s.quad_var,
            3.0 * se_v
        ),
        start,
        None,
    );
    o.seconds += s.mh_s;
    o.limit_s = Some(60.0);
    o.pass &= o.seconds < 60.0;
    Ok(o)
}

fn criterion2(s: &SyntheticRuns) -> Result<Outcome> {
    let start = Instant::now();
    let mh = post_burn(&s.mh, BURN);
    let (m_mh, se_mh) = (mean(&mh), mcse(&mh, None)?);
    let mut pass = true;
    let mut detail = format!("mh {m_mh:.5}±{se_mh:.5} quad {:.5}", s.quad_mean);
    for (name, run) in [("pm", &s.pm), ("apm", &s.apm)] {
        let x = post_burn(run, BURN);
        let (m, se) = (mean(&x), mcse(&x, None)?);
        let z_mh = (m - m_mh) / (se * se + se_mh * se_mh).sqrt();
        let z_q = (m - s.quad_mean) / se;
        pass &= z_mh.abs() < 3.0 && z_q.abs() < 3.0;
        detail.push_str(&format!("; {name} {m:.5}±{se:.5} z_mh {z_mh:.2} z_quad {z_q:.2}"));
    }
    let mut o = outcome(pass, detail, start, None);
    o.seconds += s.pm_s + s.apm_s;
    o.limit_s = Some(600.0);
    o.pass &= o.seconds < 600.0;
    Ok(o)
}

fn criterion3(s: &SyntheticRuns) -> Result<Outcome> {
    let start = Instant::now();
    let mut last: Vec<usize> = s.apm.epochs.iter().rev().take(20).map(|e| e.n_after).collect();
    last.sort_unstable();
    let final_n = (last[9] + last[10]) / 2;
    let n_opt = s.pm_report.n_opt;
    let theta_hat = ParamVector::scalar(mean(&post_burn(&s.apm, BURN)));
    let sigma = sigma_n_mc(&s.model, &theta_hat, final_n, 10_000, &mut RngStream::new(SEED, 3))?;
    let pass = final_n.abs_diff(n_opt) <= 10 && (sigma - 1.16).abs() <= 0.05;
    let mut o = outcome(
        pass,
        format!("APM final N {final_n}, N_opt {n_opt}, sigma at final N {sigma:.4}"),
        start,
        None,
    );
    o.seconds += s.pm_s + s.apm_s;
    o.limit_s = Some(900.0);
    o.pass &= o.seconds < 900.0;
    Ok(o)
}

fn criterion4(s: &SyntheticRuns) -> Result<Outcome> {
    let start = Instant::now();
    let table: HashMap<usize, f64> = [
        (100, 1.652),
        (1000, 0.521),
        (550, 0.703),
        (325, 0.926),
        (213, 1.120),
        (157, 1.306),
        (185, 1.200),
        (199, 1.165),
        (206, 1.140),
        (203, 1.162),
        (205, 1.145),
        (204, 1.143),
    ]
    .into_iter()
    .collect();
    let (n_table, trace) = dichotomic_search_with(|n| Ok(table[&n]), 100, 1000, 1, 1.16)?;
    let last = trace.rows.last().expect("rows");
    let replay_ok = n_table == 203 && (last.lo, last.hi) == (203, 204) && trace.midpoint_count() == 10;

    let c = 1.16 * 20.0;
    let (n_stub, stub) = dichotomic_search_with(|n| Ok(c / (n as f64).sqrt()), 100, 1000, 1, 1.16)?;
    let widths: Vec<usize> = stub.rows.iter().skip(2).map(|r| r.hi - r.lo).collect();
    let closest = stub
        .rows
        .iter()
        .min_by(|a, b| (a.sigma_hat - 1.16).abs().total_cmp(&(b.sigma_hat - 1.16).abs()))
        .expect("rows")
        .tested_n;
    let stub_ok = widths.windows(2).all(|w| w[1] < w[0]) && *widths.last().unwrap_or(&0) <= 1 && n_stub == closest;

    let real = s.pm_report.search.midpoint_count();
    let pass = replay_ok && stub_ok && real <= 11;
    Ok(outcome(
        pass,
        format!(
            "table replay N {n_table} [{}, {}], stub N {n_stub}, real search {real} midpoints",
            last.lo, last.hi
        ),
        start,
        None,
    ))
}

fn criterion5() -> Result<Outcome> {
    let start = Instant::now();
    let data = SyntheticData::from_observations(STUB5.to_vec());
    let model = SyntheticModel::new(data.clone());
    let theta = 0.5;
    let exact = synthetic_loglik(theta, &STUB5);
    let p = ParamVector::scalar(theta);
    let mut rng = RngStream::new(SEED, 5);
    let w2: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let e = model.estimate_loglik(&p, &p, 1, &mut rng).expect("finite");
            (2.0 * (e.log_lik - exact)).exp()
        })
        .collect();
    let (m, se) = mean_se(&w2);
    let closed = weight_second_moment_exact(theta, &data).exp();
    let zeros = SyntheticData::from_observations(vec![0.0; 10]);
    let limit = weight_second_moment_exact(100.0, &zeros).exp() / 10f64.exp();
    let pass = (m - closed).abs() < 3.0 * se && (limit - 1.0).abs() < 0.01;
    Ok(outcome(
        pass,
        format!("E[W^2] MC {m:.4}±{se:.4} vs closed form {closed:.4}; theta=100 ratio to e^T {limit:.5}"),
        start,
        Some(60.0),
    ))
}

fn ratio_stats(model: &dyn Model, theta: &ParamVector, n: usize, exact: f64, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::new(SEED, seed);
    let r: Vec<f64> = (0..100_000)
        .map(|_| {
            (model
                .estimate_loglik(theta, theta, n, &mut rng)
                .expect("finite")
                .log_lik
                - exact)
                .exp()
        })
        .collect();
    mean_se(&r)
}

fn criterion6() -> Result<Outcome> {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = String::new();
    let synth = SyntheticModel::new(SyntheticData::from_observations(STUB5.to_vec()));
    let exact = synthetic_loglik(0.5, &STUB5);
    for n in [1usize, 10, 100] {
        let (m, se) = ratio_stats(&synth, &ParamVector::scalar(0.5), n, exact, 60 + n as u64);
        pass &= (m - 1.0).abs() < 3.0 * se;
        detail.push_str(&format!("synthetic N={n} {m:.4}±{se:.4}; "));
    }
    let beta = [0.3, -0.5, 0.2, 0.0, 0.1, 0.0, -0.2, 0.4];
    let data = generate_glmm(3, 2, &beta, 1.2, 17);
    let tuples: Vec<(Vec<u8>, Vec<[f64; 8]>)> = data.subjects.iter().map(|s| (s.y.clone(), s.x.clone())).collect();
    let exact = glmm_loglik(&tuples, &beta, 1.2);
    let mut theta = beta.to_vec();
    theta.push(1.2);
    let (m, se) = ratio_stats(&GlmmModel::new(data), &ParamVector::new(theta)?, 5, exact, 66);
    pass &= (m - 1.0).abs() < 3.0 * se;
    detail.push_str(&format!("glmm N=5 {m:.4}±{se:.4}"));
    Ok(outcome(pass, detail, start, None))
}

/// Recycled values alternate between two levels so every epoch has noise
/// estimate `sd`, far from the target.
struct Forced {
    sd: f64,
    calls: AtomicU64,
}

impl Model for Forced {
    fn dim(&self) -> usize {
        1
    }

    fn log_prior(&self, _theta: &ParamVector) -> f64 {
        0.0
    }

    fn estimate_loglik(
        &self,
        _t: &ParamVector,
        _r: &ParamVector,
        _n: usize,
        _rng: &mut RngStream,
    ) -> Result<EstimateWithAux> {
        let k = self.calls.fetch_add(1, Ordering::Relaxed);
        let half = self.sd / std::f64::consts::SQRT_2;
        Ok(EstimateWithAux {
            log_lik: 0.0,
            recycled_log_lik: if k.is_multiple_of(2) { -half } else { half },
        })
    }

    fn name(&self) -> &'static str {
        "forced"
    }
}

fn criterion7() -> Result<Outcome> {
    let start = Instant::now();
    let (reps, epochs, k) = (200usize, 100usize, 2usize);
    let prop = ProposalSpec::univariate(1.0)?;
    let mut config = AdaptConfig::new(1.16, 50);
    config.epoch_size = k;
    let mut changes = vec![0usize; epochs];
    for rep in 0..reps {
        let model = Forced {
            sd: 3.0,
            calls: AtomicU64::new(0),
        };
        let run = run_apm(
            &model,
            &ParamVector::scalar(0.0),
            &prop,
            &config,
            (epochs * k) as u64,
            &mut NullSink,
            &RngStream::new(SEED, 700 + rep as u64),
        )?;
        for (j, e) in run.epochs.iter().enumerate() {
            if e.n_after != e.n_before {
                changes[j] += 1;
            }
        }
    }
    let mut outside = Vec::new();
    for (j, &c) in changes.iter().enumerate() {
        let p = 1.0 / ((j + 1) as f64).sqrt();
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        let freq = c as f64 / reps as f64;
        if (freq - p).abs() > 3.0 * se {
            outside.push(j + 1);
        }
    }

    let data = generate_data(50, 0.0, 21);
    let model = SyntheticModel::new(data);
    let prop = ProposalSpec::univariate(8.0 / 50.0)?;
    let rng = RngStream::new(SEED, 77);
    let mut a = CsvTraceSink::new(Vec::new(), 1)?;
    let mut zero = AdaptConfig::new(1.16, 30);
    zero.schedule = ProbSchedule::Constant(0.0);
    run_apm(&model, &ParamVector::scalar(0.0), &prop, &zero, 5000, &mut a, &rng)?;
    let mut b = CsvTraceSink::new(Vec::new(), 1)?;
    run_pm(&model, &ParamVector::scalar(0.0), &prop, 30, 100, 5000, &mut b, &rng)?;
    let identical = a.into_inner()? == b.into_inner()?;

    Ok(outcome(
        outside.is_empty() && identical,
        format!("epochs outside 3 binomial SE: {outside:?}; p=0 trace byte-identical to PM: {identical}"),
        start,
        None,
    ))
}

fn criterion8() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(SEED);
    let iid: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut x = 0.0;
    let ar: Vec<f64> = (0..100_000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x = 0.5 * x + z;
            x
        })
        .collect();
    let if_iid = obm_if(&iid, None)?;
    let if_ar = obm_if(&ar, None)?;
    let z = geweke_z(&iid, 0.1, 0.5)?;
    let e = esm(800_000, 12.372, 62.37);
    let pass = (if_iid - 1.0).abs() <= 0.1 && (if_ar - 3.0).abs() <= 0.5 && z.abs() < 3.0 && (e - 1037.0).abs() <= 1.0;
    Ok(outcome(
        pass,
        format!("IF iid {if_iid:.3}, IF AR(1) {if_ar:.3}, Geweke z {z:.3}, ESM {e:.2}"),
        start,
        None,
    ))
}

fn criterion9() -> Result<Outcome> {
    let start = Instant::now();
    let mut section = ModelSection::glmm(30, 4, DATA_SEED);
    section.tau_true = Some(10.0);
    let model = Dataset::generate(&section)?.into_model(&section);
    let model = model.as_ref();
    let rng = RngStream::new(SEED, 9);

    // Short fixed-N pilot to shape the proposal for the simulated data.
    let pilot_prop = ProposalSpec::scaled(glmm::L_OPT, &glmm::default_sigma_p())?;
    let theta0 = ParamVector::new(glmm::THETA0.to_vec())?;
    let pilot = run_pm(
        model,
        &theta0,
        &pilot_prop,
        5,
        100,
        5_000,
        &mut NullSink,
        &rng.child(100),
    )?;
    let kept = &pilot.samples[2_000 * glmm::DIM..];
    let cov = sample_covariance(kept, glmm::DIM);
    let start_theta: Vec<f64> = (0..glmm::DIM)
        .map(|i| kept.iter().skip(i).step_by(glmm::DIM).sum::<f64>() / (kept.len() / glmm::DIM) as f64)
        .collect();
    let pilot_s = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let prop = ProposalSpec::scaled(glmm::L_OPT, &cov)?;
    let apm = run_apm(
        model,
        &ParamVector::new(start_theta)?,
        &prop,
        &AdaptConfig::new(1.44, 5),
        20_000,
        &mut NullSink,
        &rng,
    )?;
    let apm_s = t.elapsed().as_secs_f64();

    let last: Vec<f64> = apm.epochs.iter().rev().take(20).map(|e| e.n_after as f64).collect();
    let n_sd = sd(&last);
    let final_n = apm.final_n();
    // The controller's own reference point: the running mean of every draw.
    let theta_hat: Vec<f64> = (0..glmm::DIM)
        .map(|i| apm.samples.iter().skip(i).step_by(glmm::DIM).sum::<f64>() / apm.total as f64)
        .collect();
    let burn = 8_000 * glmm::DIM;
    let post = &apm.samples[burn..];
    let post_mean: Vec<f64> = (0..glmm::DIM)
        .map(|i| post.iter().skip(i).step_by(glmm::DIM).sum::<f64>() / (post.len() / glmm::DIM) as f64)
        .collect();
    let sigma = sigma_n_mc(
        model,
        &ParamVector::new(theta_hat)?,
        final_n,
        10_000,
        &mut RngStream::new(SEED, 90),
    )?;
    let sigma_post = sigma_n_mc(
        model,
        &ParamVector::new(post_mean)?,
        final_n,
        10_000,
        &mut RngStream::new(SEED, 91),
    )?;
    let pass = apm_s < 600.0 && n_sd <= 2.0 && (sigma - 1.44).abs() <= 0.15;
    let mut o = outcome(
        pass,
        format!(
            "APM {:.1}s (pilot {pilot_s:.1}s), final N {final_n}, last-20 N sd {n_sd:.3}, sigma at final N {sigma:.4} (at post-burn-in mean {sigma_post:.4}), accept {:.3}",
            apm_s,
            apm.accept_rate()
        ),
        start,
        None,
    );
    o.limit_s = Some(600.0);
    Ok(o)
}

fn criterion10() -> Result<Outcome> {
    let start = Instant::now();
    let model = SyntheticModel::new(generate_data(T_OBS, 0.0, DATA_SEED));
    let theta = ParamVector::scalar(0.0);
    let s100 = sigma_n_mc(&model, &theta, 100, 10_000, &mut RngStream::new(SEED, 100))?;
    let s400 = sigma_n_mc(&model, &theta, 400, 10_000, &mut RngStream::new(SEED, 400))?;
    let r = s100 / s400;
    Ok(outcome(
        r > 1.7 && r < 2.3,
        format!("sigma(100) {s100:.4}, sigma(400) {s400:.4}, ratio {r:.4}"),
        start,
        None,
    ))
}

fn report(k: usize, res: Result<Outcome>) -> bool {
    match res {
        Ok(o) => {
            let time = match o.limit_s {
                Some(l) => format!("{:.1}s / limit {l:.0}s", o.seconds),
                None => format!("{:.1}s", o.seconds),
            };
            println!(
                "{} criterion {k:>2}: {} [{time}]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            o.pass
        }
        Err(e) => {
            println!("FAIL criterion {k:>2}: error {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| only.is_empty() || only.contains(&k);
    let mut ok = true;

    if (1..=4).any(wanted) {
        match synthetic_runs() {
            Ok(s) => {
                let checks: [(usize, SyntheticCheck); 4] =
                    [(1, criterion1), (2, criterion2), (3, criterion3), (4, criterion4)];
                for (k, f) in checks {
                    if wanted(k) {
                        ok &= report(k, f(&s));
                    }
                }
            }
            Err(e) => {
                for k in (1..=4).filter(|&k| wanted(k)) {
                    println!("FAIL criterion {k:>2}: error {e}");
                }
                ok = false;
            }
        }
    }
    let rest: [(usize, Check); 6] = [
        (5, criterion5),
        (6, criterion6),
        (7, criterion7),
        (8, criterion8),
        (9, criterion9),
        (10, criterion10),
    ];
    for (k, f) in rest {
        if wanted(k) {
            ok &= report(k, f());
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
