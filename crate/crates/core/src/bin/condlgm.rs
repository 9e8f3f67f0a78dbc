use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use condlgm::cli::{self, CliError};
use condlgm::models::ModelId;

#[derive(Parser)]
#[command(name = "condlgm", version, about = "Bayesian inference by conditioning latent Gaussian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the conditioning parameters and write posterior summaries.
    Fit {
        /// Run configuration (`key = value` lines).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Any config key, e.g. `--set sampler.N=2000`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write a synthetic dataset for one of the shipped models.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute diagnostics of a finished run from its samples.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
    },
}

fn fit_command(config: Option<PathBuf>, flags: Vec<(String, String)>) -> Result<(), (CliError, Option<PathBuf>)> {
    let cfg = cli::load_config(config.as_deref(), &flags)?;
    let summary = cli::fit(&cfg).map_err(|e| (e, Some(cfg.out.clone())))?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    println!("{} samples, ESS {:.1}, written to {}", summary.n_samples, summary.ess, cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let result = match args.command {
        Command::Fit { config, model, data, method, seed, workers, out, set } => {
            let mut flags: Vec<(String, String)> = Vec::new();
            let mut parsed = Vec::new();
            for s in &set {
                match cli::parse_assignment(s) {
                    Ok(kv) => parsed.push(kv),
                    Err(e) => {
                        let err = CliError::from(e);
                        eprintln!("{err}");
                        return ExitCode::from(err.exit_code() as u8);
                    }
                }
            }
            flags.extend(parsed);
            let named = [
                ("model", model),
                ("data", data.map(|p| p.display().to_string())),
                ("method", method),
                ("seed", seed.map(|v| v.to_string())),
                ("workers", workers.map(|v| v.to_string())),
                ("out", out.map(|p| p.display().to_string())),
            ];
            flags.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
            fit_command(config, flags)
        }
        Command::Simulate { model, seed, n, out } => model
            .parse::<ModelId>()
            .map_err(CliError::from)
            .and_then(|m| cli::simulate(m, seed, n, &out))
            .map_err(|e| (e, None)),
        Command::Diagnose { run } => match cli::diagnose_run(&run) {
            Ok(rep) => {
                println!("{} samples, ESS {:.1}", rep.n_samples, rep.ess);
                Ok(())
            }
            Err(e) => Err((e, None)),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((err, dir)) => {
            eprintln!("{err}");
            if let Some(d) = dir {
                cli::write_error(&d, &err);
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
