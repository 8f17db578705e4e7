//! `saddlestab`: analyze, stabilize, simulate and destabilize Hamiltonian
//! equilibria from the command line.
//!
//! Exit codes: 0 success, 2 classification or configuration error,
//! 3 gain or hypothesis violation, 4 verification failure.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use config::{Options, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "saddlestab", version, about = "Feedback stabilization of saddle-center equilibria")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equilibrium, spectrum, normal-form transform and feedback functions
    Analyze(Options),
    /// Build the feedback law, check its hypotheses and verify stability by simulation
    Stabilize(Options),
    /// Integrate one closed-loop (or, with --no-control, open-loop) trajectory
    Simulate(Options),
    /// Turn a center-type equilibrium into a saddle-center one
    Destabilize(Options),
    /// List the built-in systems
    ListSystems,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Classification(String),
    Io(String),
    Core(saddle_core::Error),
    /// Gain or hypothesis violation, with the partial report.
    Precondition(String, Option<Value>),
    Verification(String, Option<Value>),
}

impl From<saddle_core::Error> for CliError {
    fn from(e: saddle_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use saddle_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Classification(_) | CliError::Io(_) => 2,
            CliError::Precondition(..) => 3,
            CliError::Verification(..) => 4,
            CliError::Core(E::Gain(_)) => 3,
            CliError::Core(E::Integration { .. } | E::StepUnderflow { .. }) => 4,
            CliError::Core(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Classification(m) | CliError::Io(m) => m.clone(),
            CliError::Precondition(m, _) | CliError::Verification(m, _) => m.clone(),
            CliError::Core(e) => {
                let mut msg = e.to_string();
                let mut src = std::error::Error::source(e);
                while let Some(s) = src {
                    msg.push_str(&format!(": {s}"));
                    src = s.source();
                }
                msg
            }
        }
    }

    fn report(&self) -> Option<&Value> {
        match self {
            CliError::Precondition(_, r) | CliError::Verification(_, r) => r.as_ref(),
            _ => None,
        }
    }
}

fn run(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::Analyze(o) => commands::cmd_analyze(&RunConfig::resolve(&o, 50.0)?),
        Command::Stabilize(o) => commands::cmd_stabilize(&RunConfig::resolve(&o, 300.0)?),
        Command::Simulate(o) => commands::cmd_simulate(&RunConfig::resolve(&o, 50.0)?),
        Command::Destabilize(o) => commands::cmd_destabilize(&RunConfig::resolve(&o, 50.0)?),
        Command::ListSystems => Ok(commands::cmd_list_systems()),
    }
}

fn print(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            print(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Some(r) = e.report() {
                print(r);
            }
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
