use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kcfit_bench::cli::{self, AdmmOverrides};
use kcfit_bench::{run_experiment, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "kcfit", version, about = "Fit linear policies to expert demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// JSON input file.
    #[arg(long)]
    config: PathBuf,
    /// Output file (directory for `experiment`); stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdmmFlags {
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the gain re-synthesised from the recovered cost.
    #[arg(long)]
    certify: bool,
}

impl AdmmFlags {
    fn overrides(&self) -> AdmmOverrides {
        AdmmOverrides {
            rho: self.rho,
            iters: self.iters,
            eps: self.eps,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati equation for `{A, B, W?, Q?, R?}`.
    Lqr(Io),
    /// Plain policy fit of `{states, inputs, loss?, reg?}`.
    Fit(Io),
    /// Kalman-constrained fit; problem and demonstrations in one file.
    FitKalman {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        admm: AdmmFlags,
    },
    /// Search for a certificate that `K` is LQR-optimal for some cost.
    CheckKalman(Io),
    /// Run an experiment grid; `--seed` sets the master seed.
    Experiment {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        admm: AdmmFlags,
    },
}

fn emit(value: &serde_json::Value, out: Option<&PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Lqr(io) => emit(&cli::lqr(&cli::read_input(&io.config)?)?, io.out.as_ref()),
        Command::Fit(io) => emit(&cli::fit(&cli::read_input(&io.config)?)?, io.out.as_ref()),
        Command::FitKalman { io, admm } => {
            let input = cli::read_input(&io.config)?;
            let value = cli::fit_kalman_cmd(&input, admm.overrides(), admm.certify)?;
            emit(&value, io.out.as_ref())
        }
        Command::CheckKalman(io) => {
            emit(&cli::check_kalman(&cli::read_input(&io.config)?)?, io.out.as_ref())
        }
        Command::Experiment { io, admm } => {
            let mut config = ExperimentConfig::from_file(&io.config)?;
            let overrides = AdmmOverrides { seed: None, ..admm.overrides() };
            overrides.apply(&mut config.admm);
            if let Some(seed) = admm.seed {
                config.master_seed = seed;
            }
            config.certify |= admm.certify;
            let output = run_experiment(&config)?;
            for cell in &output.cells {
                for e in &cell.errors {
                    eprintln!("seed {} N {}: {e}", cell.seed, cell.n);
                }
            }
            let dir = io.out.unwrap_or_else(|| PathBuf::from("."));
            let (csv, json) = output.write(&dir)?;
            eprintln!("wrote {} and {}", csv.display(), json.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
