use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use effect_engine::config::QueryConfig;
use effect_engine::run::{run, RunOptions};
use effect_engine::suites::{run_suite, SUITES};
use effect_engine::CliError;

#[derive(Parser)]
#[command(
    name = "effect-engine",
    version,
    about = "Treatment effects from experiment data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and answer every query in the config.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Report path; overrides `output.path` in the config. Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Let rank queries treat a least-squares fit as a flat-prior posterior.
        #[arg(long)]
        flat_prior_ok: bool,
        /// Record failed queries in the report instead of aborting.
        #[arg(long)]
        partial: bool,
    },
    /// Check a config without reading data.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare production results against the brute-force oracles.
    Verify {
        /// One of the suite names, or `all`.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("EFFECT_ENGINE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Validation(format!(
            "EFFECT_ENGINE_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))
}

fn verify(suite: &str, seed: u64) -> Result<bool, CliError> {
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else {
        vec![suite]
    };
    let mut ok = true;
    for name in names {
        let outcome = run_suite(name, seed)?;
        for c in &outcome.checks {
            println!(
                "{} {name}: {} ({})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        ok &= outcome.passed();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Run {
            data,
            config,
            out,
            seed,
            flat_prior_ok,
            partial,
        } => {
            let path = run(&RunOptions {
                data,
                config,
                out,
                seed,
                flat_prior_ok,
                partial,
            })?;
            if let Some(p) = path {
                eprintln!("report written to {}", p.display());
            }
            Ok(true)
        }
        Command::Validate { config } => {
            let bytes = std::fs::read(&config).map_err(|e| CliError::io(&config, e))?;
            let cfg = QueryConfig::from_json(&bytes)?;
            println!("config ok: {} queries", cfg.queries.len());
            Ok(true)
        }
        Command::Verify { suite, seed } => verify(&suite, seed),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
