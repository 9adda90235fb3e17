//! `regret-ldp`: run configured experiments stage by stage.
//!
//! Every verb except `emit-plotdata` reads a TOML experiment config, runs
//! one stage (or all configured stages for `run`) and writes its tables and
//! `manifest.toml` into the output directory. `REGRET_LDP_WORKERS` sets the
//! number of worker threads; results do not depend on it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regret_ldp::experiment::{emit_plotdata, run_experiment, ExperimentConfig, Stage};
use regret_ldp::numeric::configured_workers;

#[derive(Debug, Parser)]
#[command(name = "regret-ldp", version, about = "Large-deviation experiments for regret-matching stochastic approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, relative to
    /// the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the recursion and write trajectories.
    Simulate(Common),
    /// Integrate the mean ODE and tabulate deviations of simulated paths.
    Fluid(Common),
    /// Tabulate the local rate over a velocity grid.
    Rate(Common),
    /// Minimize the action of paths leaving the escape region.
    EscapeOpt(Common),
    /// Estimate escape probabilities by crude and importance sampling.
    EscapeMc(Common),
    /// Estimate mean exit times.
    ExitTime(Common),
    /// Compare both sides of the variational formula on random functionals.
    VerifyVariational(Common),
    /// Run every configured stage in order.
    Run(Common),
    /// Turn a results directory into plot-ready tables.
    EmitPlotdata {
        /// Results directory written by earlier runs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_stages(common: &Common, stages: Option<&[Stage]>) -> regret_ldp::Result<()> {
    let mut loaded = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        loaded.config.seed = seed;
    }
    let out = match &common.out {
        Some(o) => o.clone(),
        None => loaded.base.join(&loaded.config.output_dir),
    };
    let report = run_experiment(&loaded, &out, stages)?;
    println!("{} ({}), seed {}", report.manifest.name, report.manifest.stages.join(", "), report.manifest.seed);
    for w in &report.manifest.warnings {
        println!("warning: {w}");
    }
    for f in &report.manifest.files {
        println!("  {}  {}", f.sha256, out.join(&f.path).display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> regret_ldp::Result<()> {
    let single = |c: &Common, s: Stage| run_stages(c, Some(&[s]));
    match cli.command {
        Command::Simulate(c) => single(&c, Stage::Simulate),
        Command::Fluid(c) => single(&c, Stage::Fluid),
        Command::Rate(c) => single(&c, Stage::Rate),
        Command::EscapeOpt(c) => single(&c, Stage::EscapeOpt),
        Command::EscapeMc(c) => single(&c, Stage::EscapeMc),
        Command::ExitTime(c) => single(&c, Stage::ExitTime),
        Command::VerifyVariational(c) => single(&c, Stage::Variational),
        Command::Run(c) => run_stages(&c, None),
        Command::EmitPlotdata { out } => {
            for p in emit_plotdata(&out)? {
                println!("  {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = configured_workers() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
