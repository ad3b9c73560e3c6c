use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use sspgrid::pipeline::{self, synth, validate, RunConfig, Stage, SyntheticWorldSpec};
use sspgrid::Error;

/// Downscales country-level population and GDP scenarios to a grid.
#[derive(Parser)]
#[command(name = "sspgrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and a matching run configuration.
    Synth {
        /// World specification; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the growth model, potential response and ensemble weights.
    Calibrate(StageArgs),
    /// Project city populations for each scenario.
    ProjectCities(StageArgs),
    /// Compute urban and agricultural potentials.
    Potentials(StageArgs),
    /// Project urban and agricultural areas.
    Areas(StageArgs),
    /// Downscale urban population, non-urban population and GDP.
    Downscale(StageArgs),
    /// Validate the outputs of a run.
    Validate {
        #[command(flatten)]
        args: StageArgs,
        /// Another run whose downscaled grids serve as the reference.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run every stage in order.
    Run(StageArgs),
}

enum Outcome {
    Done,
    ValidationFailed,
}

fn configure_workers() -> Result<(), Error> {
    let Ok(value) = std::env::var("SSPGRID_WORKERS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("SSPGRID_WORKERS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))
}

fn report_outcome(report: &validate::ValidationReport) -> Outcome {
    for c in &report.checks {
        if c.passed {
            info!("{}: pass ({})", c.name, c.detail);
        } else {
            warn!("{}: FAIL ({})", c.name, c.detail);
        }
    }
    if report.passed() {
        Outcome::Done
    } else {
        Outcome::ValidationFailed
    }
}

fn stage(args: &StageArgs, stage: Stage) -> Result<Outcome, Error> {
    let cfg = RunConfig::load(&args.config)?;
    pipeline::run_stage(&cfg, stage, &args.out)?;
    Ok(Outcome::Done)
}

fn execute(command: Command) -> Result<Outcome, Error> {
    configure_workers()?;
    match command {
        Command::Synth { config, out } => {
            let spec = match config {
                Some(path) => SyntheticWorldSpec::load(&path)?,
                None => SyntheticWorldSpec::default(),
            };
            let world = synth::generate_world(&spec)?;
            let conf = synth::write_world(&world, &spec, &out)?;
            info!("wrote {}", conf.display());
            Ok(Outcome::Done)
        }
        Command::Calibrate(a) => stage(&a, Stage::Calibrate),
        Command::ProjectCities(a) => stage(&a, Stage::ProjectCities),
        Command::Potentials(a) => stage(&a, Stage::Potentials),
        Command::Areas(a) => stage(&a, Stage::Areas),
        Command::Downscale(a) => stage(&a, Stage::Downscale),
        Command::Validate { args, reference } => {
            let cfg = RunConfig::load(&args.config)?;
            let report = pipeline::run_stage(&cfg, Stage::Validate, &args.out)?.expect("validate returns a report");
            if let Some(reference) = reference {
                let stats = validate::compare_outputs(&args.out, &reference)?;
                validate::write_comparison(&args.out.join("comparison.csv"), &stats)?;
            }
            Ok(report_outcome(&report))
        }
        Command::Run(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let report = pipeline::run_pipeline(&cfg, &a.out)?;
            Ok(report_outcome(&report))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
