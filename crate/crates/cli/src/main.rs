use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmadapt::config::{ExperimentConfig, Mode};
use pmadapt::experiment::{cmd_compare, cmd_gen_data, cmd_run, cmd_tune, format_hms};

#[derive(Parser)]
#[command(name = "pmadapt", version, about = "Adaptive pseudo-marginal MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler named by the config's `mode` (mh, pm or apm).
    Run(Common),
    /// Preliminary run, dichotomic search for N and a final run at N_opt.
    Tune(Common),
    /// Generate a dataset and its manifest.
    GenData(Common),
    /// Tuned PM against APM (and MH when the likelihood is exact).
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    burn_in_frac: Option<f64>,
    /// Overwrite existing data files.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self, mode: Option<Mode>) -> pmadapt::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(m) = mode {
            cfg.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(b) = self.burn_in_frac {
            cfg.burn_in_frac = Some(b);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> pmadapt::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.load(None)?;
            let outcome = cmd_run(&cfg)?;
            let agg = &outcome.aggregate;
            for r in &outcome.runs {
                println!(
                    "run {:>2}  mean {:?}  accept {:.4}  IF {:.3}  N {}  time {}",
                    r.run_index,
                    r.summary.post_mean,
                    r.summary.accept_rate,
                    r.summary.if_sum,
                    r.summary.final_n,
                    format_hms(r.summary.wall_clock_s)
                );
            }
            println!(
                "{}: {} runs, accept {:.4} ± {:.4}, final N {}[{},{}], time {} ± {}",
                agg.method,
                agg.runs,
                agg.accept_rate.mean,
                agg.accept_rate.sd,
                agg.final_n.median,
                agg.final_n.min,
                agg.final_n.max,
                format_hms(agg.wall_clock_s.mean),
                format_hms(agg.wall_clock_s.sd)
            );
            println!("aggregate written to {}", outcome.aggregate_path.display());
        }
        Command::Tune(c) => {
            let cfg = c.load(Some(Mode::Tune))?;
            for t in cmd_tune(&cfg)? {
                let r = &t.report;
                println!(
                    "run {:>2}  N_opt {} (sigma {:.4})  midpoints {}  prelim {}  search {}  final {}  total {}",
                    t.run_index,
                    r.n_opt,
                    r.sigma_at_n_opt,
                    r.search.midpoint_count(),
                    format_hms(r.times.prelim_s),
                    format_hms(r.times.search_s),
                    format_hms(r.times.final_s),
                    format_hms(r.times.total_s)
                );
            }
        }
        Command::GenData(c) => {
            let cfg = c.load(Some(Mode::GenData))?;
            let path = cmd_gen_data(&cfg, c.force)?;
            println!("wrote {}", path.display());
        }
        Command::Compare(c) => {
            let cfg = c.load(Some(Mode::Compare))?;
            let cmp = cmd_compare(&cfg)?;
            for m in &cmp.methods {
                println!(
                    "{:>4}: mean {:?} ± {:?}  final N {}[{},{}]",
                    m.method, m.pooled_mean, m.pooled_se, m.final_n.median, m.final_n.min, m.final_n.max
                );
            }
            for a in &cmp.agreement {
                println!(
                    "{} vs {}: z {:?} -> {}",
                    a.a,
                    a.b,
                    a.z,
                    if a.agree { "agree" } else { "DISAGREE" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ pmadapt::Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
