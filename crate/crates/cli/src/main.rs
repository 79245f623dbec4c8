//! `momentstein` command-line tool.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::{CliResult, Failure, Outcome};

fn dispatch(cmd: &Command) -> CliResult<Outcome> {
    let config = match cmd {
        Command::Rerun(r) => {
            let mut config = manifest::Manifest::read(&r.manifest)?.config;
            if let Some(out) = &r.out {
                config.set_out(out.clone());
            }
            if let Some(plot) = &r.plot {
                match &mut config {
                    Command::CltRates(a) => a.plot = Some(plot.clone()),
                    _ => return Err(Failure::Input("--plot applies only to clt-rates manifests".into())),
                }
            }
            config
        }
        other => other.clone(),
    };
    let mut outcome = commands::run(&config)?;
    if let Some(out) = config.out() {
        let path = commands::sidecar(out, ".manifest.json");
        manifest::Manifest::new(config.clone(), &outcome).write(&path)?;
        outcome.outputs.push(path);
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli.command) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            match outcome.assertion {
                Some(msg) => {
                    eprintln!("assertion failed: {msg}");
                    ExitCode::from(2)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(2)
        }
    }
}
