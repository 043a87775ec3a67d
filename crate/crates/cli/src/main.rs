//! `todalab`: command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 numerical failure, 64 configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{exit_code_for, Ctx, Outcome};
use config::{Format, RunConfig};

#[derive(Parser)]
#[command(name = "todalab", version, about = "SU(3) Toda functional on the unit flat torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; reports go to stdout without one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form identity checks.
    Verify {
        /// Inject a fault so every check fails.
        #[arg(long)]
        perturb: bool,
    },
    /// Minimize the regularized functional.
    Solve,
    /// Build a Green's-function pair and report its local data.
    Green,
    /// Test-function energies and the deficit fit.
    Testfn,
    /// ε-sweep with blow-up classification.
    Sweep,
}

fn run(cli: Cli) -> Result<Outcome, todalab::Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(f) = cli.format {
        cfg.format = match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        };
    }
    let out = cli.out.clone().or_else(|| cfg.output_dir.clone());
    let ctx = Ctx { cfg: &cfg, out: out.as_deref(), format: cfg.format };
    match cli.command {
        Command::Verify { perturb } => commands::verify(&ctx, perturb),
        Command::Solve => commands::solve(&ctx),
        Command::Green => commands::green(&ctx),
        Command::Testfn => commands::testfn(&ctx),
        Command::Sweep => commands::sweep_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Ok(Outcome::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
