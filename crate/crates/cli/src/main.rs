use std::process::ExitCode;

use bitdecode_cli::commands::CliError;
use bitdecode_cli::config::ConfigError;
use clap::Parser;

fn main() -> ExitCode {
    let cli = match bitdecode_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match bitdecode_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // `validate` has already printed its diagnostics.
            if !matches!(&e, CliError::Config(ConfigError::Invalid(d)) if d.is_empty()) {
                eprintln!("{e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
