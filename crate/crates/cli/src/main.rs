use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use extrapol_cli::config::{ConfigError, Experiment, ExperimentSpec, Overrides};
use extrapol_cli::experiments::{print_summary, run};
use extrapol_cli::WORKERS_ENV;

/// Implicit-bias experiments for linear and gated recurrent networks.
#[derive(Parser)]
#[command(version, after_help = "Set EXTRAPOL_WORKERS to cap the number of worker threads.")]
struct Cli {
    #[arg(value_enum)]
    command: Experiment,
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Overrides,
}

fn resolve(cli: Cli) -> Result<ExperimentSpec, ConfigError> {
    let file = match &cli.config {
        Some(p) => Overrides::from_file(p)?,
        None => Overrides::default(),
    };
    ExperimentSpec::resolve(cli.command, file.layered(cli.flags))
}

fn init_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let spec = match resolve(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    println!("{}: spec {} seed {}", spec.experiment, spec.hash(), spec.seed);
    match run(&spec) {
        Ok(out) => {
            print_summary(&out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
