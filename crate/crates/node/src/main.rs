use std::process::ExitCode;

use clap::Parser;
use lthmpc::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = String::new();
    let res = execute(&cli.cmd, &mut out);
    print!("{out}");
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
