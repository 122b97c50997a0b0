mod cli;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use lcgf::error::ErrorKind;
use lcgf::Error;

use cli::Cli;
use output::Header;

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(match e.kind() {
        ErrorKind::Input => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::InsufficientData => 3,
    })
}

fn main() -> ExitCode {
    let cmd = Cli::command();
    let argv = match config::inject(&cmd, std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("lcgf: {e}");
            return exit_code(&e);
        }
    };
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let header = Header {
        command: name.to_string(),
        entries: config::resolved(&cmd, name, sub),
    };
    match commands::run(cli.command, &header) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lcgf: {e}");
            exit_code(&e)
        }
    }
}
