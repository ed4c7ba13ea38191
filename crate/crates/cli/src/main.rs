use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = tzpc_cli::Cli::parse();
    tzpc_cli::init_logging();
    ExitCode::from(tzpc_cli::run(&cli, &mut std::io::stdout()))
}
