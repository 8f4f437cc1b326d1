//! Experiment orchestration: dataset handling, independent replications,
//! per-run and aggregate outputs, the tuning pipeline and method comparison.
//!
//! Output files carry the config hash in their names. Everything written is
//! a deterministic function of the config except wall-clock fields and the
//! statistics derived from them (ESM).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode, ModelKind, ModelSection};
use crate::diagnostics::{acf, summarize_with, ChainSummary};
use crate::error::{Error, Result};
use crate::glmm::{generate_glmm, GlmmData, GlmmModel};
use crate::kernel::ChainRun;
use crate::model::Model;
use crate::param::ParamVector;
use crate::proposal::ProposalSpec;
use crate::rng::RngStream;
use crate::samplers::{run_apm, run_exact_mh, run_pm};
use crate::synthetic::{generate_data, SyntheticData, SyntheticModel};
use crate::trace::CsvTraceSink;
use crate::tuner::{run_pipeline, PipelineReport};

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Synthetic(SyntheticData),
    Glmm(GlmmData),
}

impl Dataset {
    /// Simulates the dataset described by `model` from its `data_seed`.
    pub fn generate(model: &ModelSection) -> Result<Self> {
        Ok(match model.kind {
            ModelKind::Synthetic => Dataset::Synthetic(generate_data(model.t_obs, model.theta_bar, model.data_seed)),
            ModelKind::Glmm => Dataset::Glmm(generate_glmm(
                model.subjects,
                model.per_subject,
                &model.resolved_beta_true()?,
                model.resolved_tau_true(),
                model.data_seed,
            )),
        })
    }

    /// Reads `model.data_path` when set, otherwise generates.
    pub fn load(model: &ModelSection) -> Result<Self> {
        match &model.data_path {
            Some(path) => Self::read(model.kind, path),
            None => Self::generate(model),
        }
    }

    pub fn read(kind: ModelKind, path: &Path) -> Result<Self> {
        Ok(match kind {
            ModelKind::Synthetic => Dataset::Synthetic(SyntheticData::read_csv(path)?),
            ModelKind::Glmm => Dataset::Glmm(GlmmData::read_csv(path)?),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        match self {
            Dataset::Synthetic(d) => d.write_csv(w),
            Dataset::Glmm(d) => d.write_csv(w),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Dataset::Synthetic(d) => d.len(),
            Dataset::Glmm(d) => d.n_responses(),
        }
    }

    /// Observations per likelihood factor count used for the default
    /// synthetic proposal (`8 / T`).
    pub fn t_obs(&self) -> usize {
        match self {
            Dataset::Synthetic(d) => d.len(),
            Dataset::Glmm(d) => d.n_subjects(),
        }
    }

    pub fn into_model(self, section: &ModelSection) -> Box<dyn Model> {
        match self {
            Dataset::Synthetic(d) => {
                let mut m = SyntheticModel::new(d);
                m.config.sigma0 = section.sigma0;
                Box::new(m)
            }
            Dataset::Glmm(d) => Box::new(GlmmModel::new(d)),
        }
    }
}

/// Model, proposal and starting point resolved from a config.
pub struct Setup {
    pub model: Box<dyn Model>,
    pub proposal: ProposalSpec,
    pub theta0: ParamVector,
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let data = Dataset::load(&cfg.model)?;
        let sigma_p = cfg.resolved_sigma_p(data.t_obs())?;
        let proposal = ProposalSpec::scaled(cfg.resolved_l_opt(), &sigma_p)?;
        let theta0 = ParamVector::new(cfg.resolved_theta0()?)?;
        Ok(Self {
            model: data.into_model(&cfg.model),
            proposal,
            theta0,
        })
    }
}

/// Stream for replication `run_index`: `stream_id = seed XOR run_index`.
pub fn run_stream(seed: u64, run_index: usize) -> RngStream {
    RngStream::new(seed, seed ^ run_index as u64)
}

/// Per-run summary file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub run_index: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub config_hash: String,
    pub iterations: u64,
    pub summary: ChainSummary,
    /// `(epoch, n_after)` at every epoch boundary.
    pub n_by_epoch: Vec<(u64, usize)>,
    /// Autocorrelations of each coordinate after burn-in, lags `0..=acf_lags`.
    pub acf: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    #[serde(with = "crate::numeric::nonfinite")]
    pub mean: f64,
    #[serde(with = "crate::numeric::nonfinite")]
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianRange {
    pub median: f64,
    pub min: usize,
    pub max: usize,
}

impl MedianRange {
    pub fn of(xs: &[usize]) -> Self {
        let mut v = xs.to_vec();
        v.sort_unstable();
        let k = v.len();
        let median = if k % 2 == 1 {
            v[k / 2] as f64
        } else {
            (v[k / 2 - 1] + v[k / 2]) as f64 / 2.0
        };
        Self {
            median,
            min: v[0],
            max: v[k - 1],
        }
    }
}

/// Across-run statistics in the layout of the results tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub runs: usize,
    pub post_mean: Vec<MeanSd>,
    pub post_var: Vec<MeanSd>,
    pub post_mean_norm: MeanSd,
    pub post_var_norm: MeanSd,
    pub accept_rate: MeanSd,
    pub if_sum: MeanSd,
    pub wall_clock_s: MeanSd,
    pub esm: MeanSd,
    pub final_n: MedianRange,
    /// Standard error of the across-run average posterior mean, from the
    /// per-run OBM standard errors.
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub pooled_mean: Vec<f64>,
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub pooled_se: Vec<f64>,
}

impl Aggregate {
    pub fn from_runs(method: &str, runs: &[RunSummary]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InsufficientData("no runs to aggregate".into()));
        }
        let dim = runs[0].summary.post_mean.len();
        let col = |f: &dyn Fn(&ChainSummary) -> f64| -> MeanSd {
            MeanSd::of(&runs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>())
        };
        let r = runs.len() as f64;
        let pooled_mean = (0..dim)
            .map(|i| runs.iter().map(|x| x.summary.post_mean[i]).sum::<f64>() / r)
            .collect();
        let pooled_se = (0..dim)
            .map(|i| {
                runs.iter()
                    .map(|x| x.summary.post_mean_mcse[i].powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / r
            })
            .collect();
        Ok(Self {
            method: method.to_string(),
            runs: runs.len(),
            post_mean: (0..dim).map(|i| col(&|s| s.post_mean[i])).collect(),
            post_var: (0..dim).map(|i| col(&|s| s.post_var[i])).collect(),
            post_mean_norm: col(&|s| s.post_mean_norm),
            post_var_norm: col(&|s| s.post_var_norm),
            accept_rate: col(&|s| s.accept_rate),
            if_sum: col(&|s| s.if_sum),
            wall_clock_s: col(&|s| s.wall_clock_s),
            esm: col(&|s| s.esm),
            final_n: MedianRange::of(&runs.iter().map(|r| r.summary.final_n).collect::<Vec<_>>()),
            pooled_mean,
            pooled_se,
        })
    }
}

/// `3723.4` -> `"1h02m03s"`.
pub fn format_hms(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    let (h, m, s) = (total / 3600, (total % 3600) / 60, total % 60);
    if h > 0 {
        format!("{h}h{m:02}m{s:02}s")
    } else if m > 0 {
        format!("{m}m{s:02}s")
    } else {
        format!("{:.2}s", seconds.max(0.0))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

fn file_stem(method: &str, hash: &str, run_index: usize) -> String {
    format!("{method}_{hash}_run{run_index:02}")
}

/// Runs `f(0..runs)` on up to `jobs` threads; results come back in index order.
fn parallel_runs<T: Send>(runs: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..runs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, runs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= runs {
                    break;
                }
                let out = f(i);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every index is claimed"))
        .collect()
}

fn finish_run(
    cfg: &ExperimentConfig,
    method: &str,
    run_index: usize,
    run: &ChainRun,
    burn_in: u64,
) -> Result<RunSummary> {
    let summary = summarize_with(run, burn_in, cfg.diagnostics.batch_size)?;
    let mut acfs = Vec::with_capacity(run.dim);
    for i in 0..run.dim {
        let col = run.coordinate(i).split_off(burn_in as usize);
        let lags = cfg.diagnostics.acf_lags.min(col.len().saturating_sub(1));
        acfs.push(acf(&col, lags).unwrap_or_default());
    }
    let stream = run_stream(cfg.seed, run_index);
    Ok(RunSummary {
        method: method.to_string(),
        run_index,
        seed: cfg.seed,
        stream_id: stream.stream_id(),
        config_hash: cfg.hash(),
        iterations: run.total,
        summary,
        n_by_epoch: run.epochs.iter().map(|e| (e.epoch, e.n_after)).collect(),
        acf: acfs,
    })
}

/// One replication of a plain sampler, writing its trace and summary.
fn single_run(cfg: &ExperimentConfig, setup: &Setup, mode: Mode, run_index: usize, out: &Path) -> Result<RunSummary> {
    let hash = cfg.hash();
    let method = mode.to_string();
    let stem = file_stem(&method, &hash, run_index);
    let dim = setup.model.dim();
    let mut sink = CsvTraceSink::new(BufWriter::new(File::create(out.join(format!("{stem}.csv")))?), dim)?;
    let rng = run_stream(cfg.seed, run_index);
    let model = setup.model.as_ref();
    let run = match mode {
        Mode::Mh => run_exact_mh(model, &setup.theta0, &setup.proposal, cfg.iterations, &mut sink, &rng)?,
        Mode::Pm => run_pm(
            model,
            &setup.theta0,
            &setup.proposal,
            cfg.n_init,
            cfg.adapt.epoch_size,
            cfg.iterations,
            &mut sink,
            &rng,
        )?,
        Mode::Apm => run_apm(
            model,
            &setup.theta0,
            &setup.proposal,
            &cfg.adapt_config()?,
            cfg.iterations,
            &mut sink,
            &rng,
        )?,
        other => return Err(Error::Config(format!("mode {other} is not a single sampler"))),
    };
    sink.into_inner()?.flush()?;
    let summary = finish_run(cfg, &method, run_index, &run, cfg.burn_in())?;
    write_json(&out.join(format!("{stem}.json")), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
    pub aggregate_path: PathBuf,
}

pub fn aggregate_path(out: &Path, method: &str, hash: &str) -> PathBuf {
    out.join(format!("{method}_{hash}_aggregate.json"))
}

/// `runs` independent replications of the sampler named by `cfg.mode`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if !matches!(cfg.mode, Mode::Mh | Mode::Pm | Mode::Apm) {
        return Err(Error::Config(format!("run needs mode mh, pm or apm, got {}", cfg.mode)));
    }
    let setup = Setup::from_config(cfg)?;
    if cfg.mode == Mode::Mh && setup.model.exact_loglik(&setup.theta0).is_none() {
        return Err(Error::Config(format!(
            "model {} has no exact likelihood for mh",
            setup.model.name()
        )));
    }
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out)?;
    let runs = parallel_runs(cfg.runs, cfg.jobs, |i| single_run(cfg, &setup, cfg.mode, i, out))?;
    let method = cfg.mode.to_string();
    let aggregate = Aggregate::from_runs(&method, &runs)?;
    let aggregate_path = aggregate_path(out, &method, &cfg.hash());
    write_json(&aggregate_path, &aggregate)?;
    Ok(RunOutcome {
        runs,
        aggregate,
        aggregate_path,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuneRun {
    pub run_index: usize,
    pub config_hash: String,
    pub report: PipelineReport,
}

fn tune_one(cfg: &ExperimentConfig, setup: &Setup, run_index: usize, out: &Path) -> Result<(TuneRun, RunSummary)> {
    let hash = cfg.hash();
    let stem = file_stem("tune", &hash, run_index);
    let dim = setup.model.dim();
    let mut sink = CsvTraceSink::new(BufWriter::new(File::create(out.join(format!("{stem}.csv")))?), dim)?;
    let (report, run) = run_pipeline(
        setup.model.as_ref(),
        &setup.theta0,
        &setup.proposal,
        cfg.resolved_l_opt(),
        &cfg.tune_config()?,
        cfg.iterations,
        cfg.burn_in(),
        cfg.adapt.epoch_size,
        &mut sink,
        &run_stream(cfg.seed, run_index),
    )?;
    sink.into_inner()?.flush()?;
    let mut search = BufWriter::new(File::create(out.join(format!("{stem}_search.csv")))?);
    report.search.write_csv(&mut search)?;
    search.flush()?;
    let tune = TuneRun {
        run_index,
        config_hash: hash,
        report,
    };
    write_json(&out.join(format!("{stem}_report.json")), &tune)?;
    let summary = finish_run(cfg, "tune", run_index, &run, cfg.burn_in())?;
    Ok((tune, summary))
}

/// The three-stage tuning pipeline, once per replication.
pub fn cmd_tune(cfg: &ExperimentConfig) -> Result<Vec<TuneRun>> {
    cfg.validate()?;
    cfg.tune_config()?;
    let setup = Setup::from_config(cfg)?;
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out)?;
    let results = parallel_runs(cfg.runs, cfg.jobs, |i| tune_one(cfg, &setup, i, out))?;
    Ok(results.into_iter().map(|(t, _)| t).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub a: String,
    pub b: String,
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub z: Vec<f64>,
    pub agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub config_hash: String,
    pub methods: Vec<Aggregate>,
    pub n_opt: Vec<usize>,
    /// Pairwise posterior-mean differences in units of the combined
    /// standard error; `agree` when every coordinate is within 3.
    pub agreement: Vec<Agreement>,
}

pub fn agreement(a: &Aggregate, b: &Aggregate) -> Agreement {
    let z: Vec<f64> = a
        .pooled_mean
        .iter()
        .zip(&b.pooled_mean)
        .zip(a.pooled_se.iter().zip(&b.pooled_se))
        .map(|((ma, mb), (sa, sb))| (ma - mb) / (sa * sa + sb * sb).sqrt())
        .collect();
    Agreement {
        a: a.method.clone(),
        b: b.method.clone(),
        agree: z.iter().all(|z| z.abs() <= 3.0),
        z,
    }
}

/// Tuned PM against APM (and exact MH when available) on the same data and
/// seed lineage.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Comparison> {
    cfg.validate()?;
    let setup = Setup::from_config(cfg)?;
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();

    let tuned = parallel_runs(cfg.runs, cfg.jobs, |i| tune_one(cfg, &setup, i, out))?;
    let n_opt = tuned.iter().map(|(t, _)| t.report.n_opt).collect();
    let pm_runs: Vec<RunSummary> = tuned.into_iter().map(|(_, s)| s).collect();
    let apm_runs = parallel_runs(cfg.runs, cfg.jobs, |i| single_run(cfg, &setup, Mode::Apm, i, out))?;
    let mut methods = vec![
        Aggregate::from_runs("pm", &pm_runs)?,
        Aggregate::from_runs("apm", &apm_runs)?,
    ];
    if setup.model.exact_loglik(&setup.theta0).is_some() {
        let mh_runs = parallel_runs(cfg.runs, cfg.jobs, |i| single_run(cfg, &setup, Mode::Mh, i, out))?;
        methods.push(Aggregate::from_runs("mh", &mh_runs)?);
    }
    let mut pairs = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            pairs.push(agreement(&methods[i], &methods[j]));
        }
    }
    let comparison = Comparison {
        config_hash: hash.clone(),
        methods,
        n_opt,
        agreement: pairs,
    };
    write_json(&out.join(format!("compare_{hash}_aggregate.json")), &comparison)?;
    Ok(comparison)
}

/// Sidecar describing how a generated dataset was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub model: ModelSection,
    pub rows: usize,
    pub sha256: String,
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Where gen-data writes: `model.data_path`, or a seed-named file in the
/// output directory.
pub fn data_target(cfg: &ExperimentConfig) -> PathBuf {
    cfg.model.data_path.clone().unwrap_or_else(|| {
        let kind = match cfg.model.kind {
            ModelKind::Synthetic => "synthetic",
            ModelKind::Glmm => "glmm",
        };
        cfg.output_dir
            .join(format!("{kind}_data_seed{}.csv", cfg.model.data_seed))
    })
}

/// Generates the configured dataset and writes it with a manifest sidecar.
/// An existing file is only replaced when `force` is set.
pub fn cmd_gen_data(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    let path = data_target(cfg);
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut section = cfg.model.clone();
    section.data_path = None;
    let data = Dataset::generate(&section)?;
    let mut bytes = Vec::new();
    data.write_csv(&mut bytes)?;
    std::fs::write(&path, &bytes)?;
    let manifest = DataManifest {
        model: section,
        rows: data.rows(),
        sha256: sha256_hex(&bytes),
    };
    write_json(&manifest_path(&path), &manifest)?;
    Ok(path)
}

/// Rebuilds a dataset from its manifest and checks it against the recorded
/// digest.
pub fn regenerate_from_manifest(manifest: &Path) -> Result<Dataset> {
    let m: DataManifest = read_json(manifest)?;
    let data = Dataset::generate(&m.model)?;
    let mut bytes = Vec::new();
    data.write_csv(&mut bytes)?;
    if sha256_hex(&bytes) != m.sha256 {
        return Err(Error::Config(format!(
            "regenerated data does not match digest in {}",
            manifest.display()
        )));
    }
    Ok(data)
}
