use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reentry_infer::config::RunConfig;
use reentry_infer::error::InferError;
use reentry_infer::pipeline;
use reentry_infer::pool::ThreadPoolRunner;

#[derive(Debug, Parser)]
#[command(name = "reentry-infer", version, about = "Infer an elliptical non-conducting region from electrograms")]
struct Cli {
    /// TOML run configuration; defaults apply to every omitted key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Prints the fully resolved configuration and exits.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs the S1-S2 protocol and writes the spiral snapshot.
    Prepace,
    /// Simulates the true geometry and writes noisy traces and features.
    GenerateData,
    /// Estimates the discretization covariance.
    SigmaD,
    /// Runs the Markov chain.
    Sample {
        /// Continues from the last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stops after this many iterations in total, leaving a checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Writes chain statistics, histograms and the (a, b) scatter.
    Diagnose,
    /// Scans the log-likelihood over the long semi-axis with both meshing
    /// strategies.
    LikelihoodScan,
}

fn load(cli: &Cli) -> Result<RunConfig, InferError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &RunConfig, command: &Command) -> Result<(), InferError> {
    match command {
        Command::Prepace => {
            let report = pipeline::prepace(cfg)?;
            println!(
                "steady spiral: last periods {:.2} and {:.2} ms after {} activations",
                report.last_period,
                report.previous_period,
                report.activations.len()
            );
        }
        Command::GenerateData => {
            let data = pipeline::generate_data(cfg)?;
            println!(
                "traces: {} electrodes x {} samples from {} ms, period {:.3} ms",
                data.traces.values.len(),
                data.traces.columns(),
                data.traces.tau0,
                data.features.period
            );
        }
        Command::SigmaD => {
            let file = pipeline::sigma_d(cfg, &ThreadPoolRunner::from_env())?;
            if !file.fallbacks.is_empty() {
                eprintln!("warning: relocation fell back to independent meshing for sweep entries {:?}", file.fallbacks);
            }
            for f in &file.failures {
                eprintln!("warning: sweep entry {} produced no features: {}", f.index, f.reason);
            }
            println!("sigma_d diagonal: {:?}", file.diagonal);
        }
        Command::Sample { resume, stop_after } => {
            let out = pipeline::sample(cfg, *resume, *stop_after)?;
            let c = out.counters;
            if c.incidents > 0 {
                eprintln!("warning: {} proposals were rejected after a numerical failure", c.incidents);
            }
            if c.invariant_violations > 0 {
                eprintln!("warning: {} feature vectors violated the zero-sum invariant", c.invariant_violations);
            }
            let status = if out.interrupted { "checkpointed" } else { "finished" };
            println!(
                "{status} after {} iterations, acceptance {:.3}, fallbacks {}",
                out.rows.len() - 1,
                out.acceptance_rate,
                out.fallback_count
            );
        }
        Command::Diagnose => {
            let r = pipeline::diagnose(cfg)?;
            println!(
                "acceptance {:.3}; mean a {:.4} b {:.4} phi {:.4}; (a,b) correlation {:.4}; written to {}",
                r.acceptance_rate,
                r.mean[0],
                r.mean[1],
                r.mean[2],
                r.ab_correlation,
                r.output.display()
            );
        }
        Command::LikelihoodScan => {
            let rows = pipeline::likelihood_scan(cfg, &ThreadPoolRunner::from_env())?;
            println!("{} scan points written to {}", rows.len(), cfg.path(&cfg.scan.output).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cli.print_config {
        print!("{}", cfg.resolved_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(1);
    };
    match run(&cfg, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
