//! `heis-lsde <command> --config <file> [--out <dir>] [--seed <n>]`
//!
//! Exit status: 0 on success, 2 when the computation fails or a check does
//! not pass, 3 on invalid configuration or input, 1 on I/O errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{ConfigError, Experiment, RunConfig};
use output::RunDir;

#[derive(Parser)]
#[command(
    version,
    about = "Level-set tracing and coarea experiments on the Heisenberg group"
)]
struct Cli {
    #[arg(value_enum)]
    command: Experiment,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 3;
    }
    match err.downcast_ref::<heis_lsde::Error>() {
        Some(heis_lsde::Error::InvalidArgument(_)) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match RunConfig::load(&cli.config).and_then(|c| {
        c.validate(cli.command)?;
        Ok(c)
    }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    cfg.output_dir = Some(out.clone());
    cfg.experiment = Some(cli.command);

    let name = cli.command.name();
    let result = RunDir::create(out).and_then(|mut dir| {
        dir.write_json("config.json", &cfg)?;
        let outcome = match cli.command {
            Experiment::Trace => commands::trace(&cfg, &mut dir),
            Experiment::Verify => commands::verify(&cfg, &mut dir),
            Experiment::Area => commands::area(&cfg, &mut dir),
            Experiment::Coarea => commands::coarea(&cfg, &mut dir),
            Experiment::Beta => commands::beta(&cfg, &mut dir),
            Experiment::Blowup => commands::blowup(&cfg, &mut dir),
        };
        match outcome {
            Ok(pass) => {
                dir.finish(name, if pass { "pass" } else { "fail" }, None)?;
                Ok(pass)
            }
            Err(e) => {
                dir.finish(name, "error", Some(&format!("{e:#}")))?;
                Err(e)
            }
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{name}: checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
