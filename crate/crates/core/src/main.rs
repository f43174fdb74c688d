use std::process::ExitCode;

use frameless_aloha::cli::{parse_config, run_experiment, summarize, ConfigError};

fn main() -> ExitCode {
    let config = match parse_config(std::env::args()) {
        Ok(config) => config,
        Err(ConfigError::Usage { message, is_help }) => {
            if is_help {
                println!("{message}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{message}");
            return ExitCode::from(1);
        }
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    match run_experiment(&config) {
        Ok(summary) => {
            print!("{}", summarize(&summary));
            if summary.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(2)
        }
    }
}
