use std::process::ExitCode;

use clap::Parser;
use protoseg::cli::{run, Cli, UsageError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(outcome) if outcome.failed.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            let ids: Vec<String> = outcome.failed.iter().map(usize::to_string).collect();
            eprintln!("failed episodes: {}", ids.join(", "));
            ExitCode::from(1)
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
