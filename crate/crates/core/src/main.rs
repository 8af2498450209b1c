use std::process::ExitCode;

use clap::Parser;
use jaenas::cli::{describe_error, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", describe_error(&cli, &e));
            ExitCode::FAILURE
        }
    }
}
