mod args;
mod commands;
mod config;
mod demo;
mod exit;
mod output;
mod serve;

use std::process::ExitCode;

use clap::Parser;
use tracing::Level;

use args::Cli;
use config::CliConfig;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();

    let config = match CliConfig::resolve(
        cli.operator.clone(),
        cli.config.as_deref(),
        cli.json,
        cli.credentials.clone(),
    ) {
        Ok(c) => c,
        Err(e) => {
            output::error(cli.json, &e);
            return ExitCode::from(exit::for_error(&e));
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(exit::INTERNAL);
        }
    };
    match runtime.block_on(commands::run(cli.command, &config)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            output::error(config.json(), &e);
            ExitCode::from(exit::for_error(&e))
        }
    }
}
