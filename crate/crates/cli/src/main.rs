mod args;
mod cmd;
mod config;
mod error;
mod util;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::RunConfig;
use error::CliError;

fn dispatch(cli: Cli) -> Result<serde_json::Value, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let result = match &cli.command {
        Command::Synth(a) => {
            cmd::synth::apply(a, &mut cfg)?;
            cfg.validate()?;
            cmd::synth::run(&cfg)
        }
        Command::Train(a) => {
            cmd::train::apply(a, &mut cfg);
            cfg.validate()?;
            cmd::train::run(&cfg)
        }
        Command::Predict(a) => {
            let opts = cmd::predict::apply(a, &mut cfg);
            cfg.validate()?;
            cmd::predict::run(&cfg, &opts)
        }
        Command::Refine(a) => {
            cmd::refine::apply(a, &mut cfg);
            cfg.validate()?;
            cmd::refine::run(&cfg)
        }
        Command::Eval(a) => {
            cmd::eval::apply(a, &mut cfg);
            cfg.validate()?;
            cmd::eval::run(&cfg)
        }
        Command::Plot(a) => {
            let opts = cmd::plot::apply(a, &mut cfg);
            cfg.validate()?;
            cmd::plot::run(&cfg, &opts)
        }
    };
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
