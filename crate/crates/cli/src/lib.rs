//! Command-line front end for the octoflight simulator.

pub mod args;
pub mod commands;
pub mod output;
pub mod plot;

use clap::Parser;

pub use args::Cli;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or input files; nothing was simulated.
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    use args::Command::*;
    match &cli.command {
        Tune(a) => commands::tune(a),
        Train(a) => commands::train_cmd(a),
        Fly(a) => commands::fly_cmd(a),
        Eval(a) => commands::eval_cmd(a),
        Plot(a) => commands::plot_cmd(a),
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
