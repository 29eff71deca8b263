//! `stabopt`: power flow, optimal dispatch, certification, constrained
//! dispatch, fault simulation and verification from the command line.
//!
//! Exit codes: 0 success, 1 solver failure, 2 input error, 3 verification
//! failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stabopt_core::Error;

use config::{CommonArgs, OptArgs, RunConfig, StudyArgs};

#[derive(Debug)]
pub enum Failure {
    Solver(String),
    Input(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Solver(_) => 1,
            Failure::Input(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. }
            | Error::SingularJacobian
            | Error::Infeasible { .. }
            | Error::MaxIterations { .. }
            | Error::SingularKkt => Failure::Solver(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "stabopt", version, about = "Stability-constrained optimal dispatch with Lur'e certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Nominal,
    Opf,
    Tscopf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the power flow at the nominal dispatch.
    Pf {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve the optimal power flow.
    Opf {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the post-fault Lur'e system and certify it.
    Certify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        study: StudyArgs,
        /// Monte-Carlo samples of the Lyapunov derivative.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Solve the stability-constrained dispatch.
    Tscopf {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        study: StudyArgs,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Simulate the fault from a dispatch; writes a trajectory and a plot.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        study: StudyArgs,
        #[command(flatten)]
        opt: OptArgs,
        /// Where the dispatch comes from, unless `--dispatch` is given.
        #[arg(long, value_enum, default_value = "opf")]
        source: Source,
        /// An `opf` or `tscopf` report to take the dispatch from.
        #[arg(long, value_name = "FILE")]
        dispatch: Option<std::path::PathBuf>,
    },
    /// Run the verification battery.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        study: StudyArgs,
        #[command(flatten)]
        opt: OptArgs,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Pf { common } => commands::cmd_pf(&RunConfig::new(&common, None, None)?),
        Command::Opf { common } => commands::cmd_opf(&RunConfig::new(&common, None, None)?),
        Command::Certify { common, study, samples } => {
            commands::cmd_certify(&RunConfig::new(&common, Some(&study), None)?, samples)
        }
        Command::Tscopf { common, study, opt } => commands::cmd_tscopf(&RunConfig::new(&common, Some(&study), Some(&opt))?),
        Command::Simulate { common, study, opt, source, dispatch } => {
            commands::cmd_simulate(&RunConfig::new(&common, Some(&study), Some(&opt))?, source, dispatch.as_deref())
        }
        Command::Verify { common, study, opt } => commands::cmd_verify(&RunConfig::new(&common, Some(&study), Some(&opt))?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("stabopt: {f}");
            ExitCode::from(f.code())
        }
    }
}
