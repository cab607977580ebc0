use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use mlbpgd::harness::{self, Experiment, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "mlbpgd", version, about = "Multilevel Bregman proximal gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for traces and images.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    /// Iterations of both the single-level and the multilevel run.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Poisson deblurring with the KL(b, Ax) objective.
    Deconv(RunArgs),
    /// Box-constrained tomographic reconstruction with KL(Ax, b).
    Tomo(RunArgs),
    /// D-optimal angle selection for parallel-beam tomography.
    Ddesign(RunArgs),
    /// Runs the built-in invariant checks.
    Selftest(RunArgs),
}

fn load(experiment: Experiment, args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path, Some(experiment))?,
        None => ExperimentConfig::defaults(experiment),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(levels) = args.levels {
        cfg.set_levels(levels);
    }
    if let Some(iters) = args.iters {
        cfg.iters = iters;
        cfg.sl_iters = iters;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(experiment: Experiment, args: &RunArgs) -> Result<bool, HarnessError> {
    let cfg = load(experiment, args)?;
    if experiment == Experiment::Selftest {
        let report = harness::selftest(cfg.seed);
        print!("{report}");
        return Ok(report.passed());
    }
    let report = harness::run_experiment(&cfg)?;
    harness::write_artifacts(&report, &cfg, &cfg.output)?;
    print!("{}", harness::experiments::summary(&report, &cfg));
    let d = &report.ml.trace.diagnostics;
    let clean = d.sufficient_descent_violations == 0
        && d.monotonicity_violations == 0
        && d.infeasible_iterates == 0
        && d.worst_coherence <= 1e-10;
    if !clean {
        error!("solver invariants were violated, see summary.txt");
    }
    Ok(clean)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Deconv(a) => (Experiment::Deconv, a),
        Command::Tomo(a) => (Experiment::Tomo, a),
        Command::Ddesign(a) => (Experiment::Ddesign, a),
        Command::Selftest(a) => (Experiment::Selftest, a),
    };
    match run(experiment, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
