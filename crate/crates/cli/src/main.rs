use std::process::ExitCode;

use clap::Parser;
use sedq_cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
