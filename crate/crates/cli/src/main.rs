use std::process::ExitCode;

use clap::Parser;
use toadwave_cli::{run, threads_from_env, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|threads| {
        if let Some(n) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        }
        run(&cli)
    });
    match result {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("toadwave: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
