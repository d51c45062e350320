//! Experiment driver: `scalim check|sweep|evolve|veff`.
//!
//! Exit codes: 0 all checks pass / all solves converged; 1 check failure;
//! 2 solver non-convergence; 3 config rejection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "scalim", version, about = "Scaling-limit laboratory for particles coupled to a scalar Bose field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the consolidated property-check suite and write check.json.
    Check(CommonArgs),
    /// Resolvent convergence sweep over Λ; writes sweep.csv.
    Sweep(CommonArgs),
    /// Time-evolution convergence over (Λ, t); writes evolve.csv.
    Evolve(CommonArgs),
    /// Tabulate the effective potential over the lattice; writes veff.csv.
    Veff(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Path to a TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (default: $SCALIM_OUT or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Parallel jobs for sweep points and block assembly.
    #[arg(long)]
    jobs: Option<usize>,

    /// Override the coupling constant κ.
    #[arg(long)]
    kappa: Option<f64>,

    /// Override the boson occupation cap N_max.
    #[arg(long)]
    n_max: Option<usize>,

    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the Λ list, comma-separated (e.g. "1,2,4,8").
    #[arg(long)]
    lambda_list: Option<String>,

    /// Override the evolution times, comma-separated.
    #[arg(long)]
    t_list: Option<String>,
}

impl CommonArgs {
    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("SCALIM_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn load_config(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::load(self.config.as_deref())?;
        if let Some(kappa) = self.kappa {
            config.kappa = kappa;
        }
        if let Some(n_max) = self.n_max {
            config.n_max = n_max;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(list) = &self.lambda_list {
            config.lambda_list = parse_list(list, "lambda-list")?;
        }
        if let Some(list) = &self.t_list {
            config.t_list = parse_list(list, "t-list")?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn parse_list(text: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| anyhow::anyhow!("--{what}: bad entry {s:?}: {e}"))
        })
        .collect()
}

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_UNCONVERGED: u8 = 2;
const EXIT_CONFIG_REJECTED: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not rejections
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG_REJECTED,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args = match &cli.command {
        Command::Check(a) | Command::Sweep(a) | Command::Evolve(a) | Command::Veff(a) => a,
    };
    let config = match args.load_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config rejected: {e:#}");
            return ExitCode::from(EXIT_CONFIG_REJECTED);
        }
    };
    let out_dir = args.out_dir();

    let body = || -> anyhow::Result<u8> {
        match &cli.command {
            Command::Check(_) => commands::run_check(&config, &out_dir),
            Command::Sweep(_) => commands::run_sweep(&config, &out_dir),
            Command::Evolve(_) => commands::run_evolve(&config, &out_dir),
            Command::Veff(_) => commands::run_veff(&config, &out_dir),
        }
    };

    let outcome = match args.jobs {
        Some(jobs) if jobs > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(body)),
        _ => body(),
    };

    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if let Some(scalim_core::Error::Unconverged(msg)) =
                e.downcast_ref::<scalim_core::Error>()
            {
                eprintln!("solver did not converge: {msg}");
                return ExitCode::from(EXIT_UNCONVERGED);
            }
            eprintln!("config rejected: {e:#}");
            ExitCode::from(EXIT_CONFIG_REJECTED)
        }
    }
}
