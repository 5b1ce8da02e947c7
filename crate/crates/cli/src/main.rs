use std::process::ExitCode;

use clap::Parser;
use onestep_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("onestep {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
