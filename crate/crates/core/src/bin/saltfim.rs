use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use saltfim::experiment::{list_models, write_compare, write_run, Experiment};
use saltfim::sensitivity::PropagationMode;
use saltfim::Error;

#[derive(Parser)]
#[command(
    name = "saltfim",
    version,
    about = "Salted Fisher information for hybrid systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, propagate sensitivities and write arc, event, FIM and report files.
    Run {
        config: PathBuf,
        /// Output directory; overrides `emit`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Monte-Carlo seed; overrides `montecarlo.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Side-by-side metrics of several propagation modes on one arc.
    Compare {
        config: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "saltation,reset_jacobian,smooth"
        )]
        modes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Builtin models with their states, parameters and outputs.
    ListModels,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn fail(stage: &str, e: &Error) -> ExitCode {
    eprintln!("saltfim: {stage}: {e}");
    if e.is_validation() {
        ExitCode::from(EXIT_VALIDATION)
    } else {
        ExitCode::from(EXIT_NUMERICAL)
    }
}

fn load(config: &PathBuf) -> Result<Experiment, ExitCode> {
    Experiment::load(config).map_err(|e| {
        eprintln!("saltfim: invalid config {}: {e}", config.display());
        ExitCode::from(EXIT_VALIDATION)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListModels => match list_models() {
            Ok(models) => {
                for m in models {
                    println!("{:<16} {}", m.name, m.description);
                    println!("{:<16} states:  {}", "", m.states.join(", "));
                    println!("{:<16} params:  {}", "", m.params.join(", "));
                    println!("{:<16} outputs: {}", "", m.outputs.join(", "));
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail("list-models", &e),
        },
        Command::Run { config, out, seed } => {
            let exp = match load(&config) {
                Ok(e) => e,
                Err(code) => return code,
            };
            let dir = out.unwrap_or_else(|| exp.config.emit.clone());
            let res = match exp.run(seed) {
                Ok(r) => r,
                Err(e) => return fail("run", &e),
            };
            match write_run(&dir, &exp, &res) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail("write", &e),
            }
        }
        Command::Compare { config, modes, out } => {
            let exp = match load(&config) {
                Ok(e) => e,
                Err(code) => return code,
            };
            let modes: Result<Vec<PropagationMode>, Error> =
                modes.iter().map(|m| m.parse()).collect();
            let modes = match modes {
                Ok(m) => m,
                Err(e) => return fail("compare", &e),
            };
            let dir = out.unwrap_or_else(|| exp.config.emit.clone());
            let report = match exp.compare(&modes) {
                Ok(r) => r,
                Err(e) => return fail("compare", &e),
            };
            println!(
                "{:<16} {:>4} {:>14} {:>14} {:>14}",
                "mode", "rank", "lambda_min", "sigma", "logdet"
            );
            for r in &report.metrics {
                println!(
                    "{:<16} {:>4} {:>14.6e} {:>14.6e} {:>14.6e}",
                    r.mode.name(),
                    r.rank,
                    r.lambda_min,
                    r.sigma,
                    r.logdet
                );
            }
            match write_compare(&dir, &report) {
                Ok(f) => {
                    println!("{}", f.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail("write", &e),
            }
        }
    }
}
