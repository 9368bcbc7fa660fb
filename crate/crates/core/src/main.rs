use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robustfl::config::{parse_config, ExperimentConfig, SWEEP_AXES};
use robustfl::exec::Execution;
use robustfl::runner::{run_and_persist, sweep, Band};
use robustfl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "robustfl",
    version,
    about = "Byzantine-robust federated learning simulator"
)]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all repeats of one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: beta, gamma, alpha, rho, theta, tau, alpha_dirichlet.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a config, then print it fully resolved.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    parse_config(&text)
}

fn describe(band: Option<&Band>) -> String {
    match band {
        Some(b) => format!("{:.4} (min {:.4}, max {:.4})", b.mean, b.min, b.max),
        None => "n/a (no rounds)".to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let execution = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match &cli.command {
        Command::Run { config, out } => load(config).and_then(|c| {
            let s = run_and_persist(&c, out, execution)?;
            println!(
                "final accuracy {} over {} repeats",
                describe(s.final_accuracy.as_ref()),
                s.repeats
            );
            Ok(())
        }),
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => load(config).and_then(|c| {
            if !SWEEP_AXES.contains(&axis.as_str()) {
                return Err(Error::Config {
                    key: "axis".into(),
                    message: format!(
                        "unknown axis `{axis}`; valid axes: {}",
                        SWEEP_AXES.join(", ")
                    ),
                });
            }
            for row in sweep(&c, axis, values, out, execution)? {
                println!(
                    "{axis}={}: {}",
                    row.value,
                    describe(row.final_accuracy.as_ref())
                );
            }
            Ok(())
        }),
        Command::Validate { config } => load(config).map(|c| print!("{}", c.to_toml())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
