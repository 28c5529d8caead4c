mod batch;
mod error;
mod serve;
mod wire;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hearth_core::mac::MacMode;
use hearth_core::scenario::{bundled, Scenario, ScenarioError, BUNDLED};
use tracing_subscriber::EnvFilter;

use error::CliError;

/// Deterministic 433MHz smart-home network simulator.
#[derive(Parser)]
#[command(name = "hearth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios in batch mode.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Derived reports.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
    /// Run a scenario in paced real time behind the HTTP, WebSocket and wire APIs.
    Serve {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Address of the length-prefixed envelope endpoint.
        #[arg(long, default_value = "127.0.0.1:0")]
        wire_bind: SocketAddr,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Client that HTTP requests act as (defaults to the first client).
        #[arg(long = "as")]
        client: Option<String>,
        /// Trace written on shutdown.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run one scenario to completion.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the MAC mode (selforg or naive).
        #[arg(long)]
        mode: Option<String>,
        /// Write the trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the metrics report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Fail with exit code 4 unless delivery >= 0.99 and command p99 <= 3s.
        #[arg(long)]
        assert: bool,
    },
    /// Run a scenario under several MAC modes and compare delivery.
    CompareMac {
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "selforg,naive")]
        modes: Vec<String>,
        /// Number of consecutive seeds, starting at the scenario seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Per-device average current and battery lifetime.
    Energy {
        scenario: String,
        #[arg(long)]
        json: bool,
    },
}

pub fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(Scenario::load(path)?);
    }
    bundled(arg).ok_or_else(|| {
        CliError::Scenario(ScenarioError::Io {
            path: arg.to_string(),
            message: "no such file or bundled scenario".into(),
        })
    })
}

pub fn parse_mode(s: &str) -> Result<MacMode, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sim { command } => match command {
            SimCommand::Run { scenario, seed, mode, trace, report, assert } => {
                let mut s = load_scenario(&scenario)?;
                if let Some(seed) = seed {
                    s.seed = seed;
                }
                if let Some(m) = mode {
                    s.mac.mode = parse_mode(&m)?;
                }
                batch::run(&s, trace.as_deref(), report.as_deref(), assert)
            }
            SimCommand::CompareMac { scenario, modes, seeds } => {
                let s = load_scenario(&scenario)?;
                let modes = modes.iter().map(|m| parse_mode(m)).collect::<Result<Vec<_>, _>>()?;
                batch::compare_mac(&s, &modes, seeds.max(1))
            }
        },
        Command::Report { command: ReportCommand::Energy { scenario, json } } => {
            batch::energy(&load_scenario(&scenario)?, json)
        }
        Command::Serve { scenario, bind, wire_bind, speed, client, trace } => {
            if !(speed > 0.0 && speed.is_finite()) {
                return Err(CliError::Usage("--speed must be positive".into()));
            }
            let s = load_scenario(&scenario)?;
            serve::serve(serve::ServeOptions { scenario: s, bind, wire_bind, speed, client, trace })
        }
        Command::Scenarios => {
            for (file, _) in BUNDLED {
                println!("{}", file.trim_end_matches(".json"));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("HEARTH_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hearth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
