use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use spllg::config::{SimulationConfig, SweepParameter};
use spllg::harness::{self, VerifyOptions};
use spllg::Error;

#[derive(Parser)]
#[command(version, about = "Stochastic Schrödinger-Poisson-LLG simulator and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config, JSON config, or a previous run's manifest.json; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Treat configuration warnings (e.g. dt above the stiffness limit) as errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    /// Transpose the Gilbert inverse inside its own check.
    GilbertTranspose,
}

#[derive(Subcommand)]
enum Command {
    /// One path; writes trace.csv, summary.json, manifest.json.
    Simulate(Common),
    /// `ensemble_size` paths; trace.csv holds per-save-point means.
    Ensemble(Common),
    /// One ensemble per value of a parameter, sharing noise streams.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// k, dt or ensemble_size; falls back to the config's sweep_parameter.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values; falls back to the config's sweep_values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Runs the invariant suite; exits 1 if any invariant fails.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

fn load(common: &Common) -> spllg::Result<SimulationConfig> {
    let mut config = match &common.config {
        Some(path) => harness::load_config(path)?,
        None => SimulationConfig::default().resolved()?,
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.validate()?;
    }
    for w in config.warnings() {
        warn!("config `{}`: {}", w.key, w.message);
    }
    if common.strict {
        config.check_strict()?;
    }
    Ok(config)
}

fn report_failures(report: &harness::RunReport) -> ExitCode {
    if report.failures.is_empty() {
        info!("outputs in {}", report.out_dir.display());
        return ExitCode::SUCCESS;
    }
    for f in &report.failures {
        error!("path {} failed at t = {}: {}", f.path, f.time, f.reason);
    }
    error!("partial outputs in {}", report.out_dir.display());
    ExitCode::from(1)
}

fn run(cli: Cli) -> spllg::Result<ExitCode> {
    match cli.command {
        Command::Simulate(common) => {
            let config = load(&common)?;
            Ok(report_failures(&harness::run_simulate(&config, &common.out)?))
        }
        Command::Ensemble(common) => {
            let config = load(&common)?;
            Ok(report_failures(&harness::run_ensemble(&config, &common.out)?))
        }
        Command::Sweep { common, param, values } => {
            let config = load(&common)?;
            let parameter: SweepParameter = match (param, config.sweep_parameter) {
                (Some(p), _) => p.parse()?,
                (None, Some(p)) => p,
                (None, None) => return Err(Error::Config {
                    key: "sweep_parameter".into(),
                    message: "pass --param or set sweep_parameter".into(),
                }),
            };
            let values = if values.is_empty() { config.sweep_values.clone() } else { values };
            Ok(report_failures(&harness::run_sweep(&config, parameter, &values, &common.out)?))
        }
        Command::Verify { common, inject_fault } => {
            let config = load(&common)?;
            let options = VerifyOptions {
                corrupt_gilbert_inverse: matches!(inject_fault, Some(Fault::GilbertTranspose)),
            };
            let report = harness::run_verify(&config, options, &common.out)?;
            for check in &report.checks {
                println!("{}", check.line());
            }
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::NumericalFailure { .. } | Error::Io { .. } => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
