use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lqsens::cli::{self, apply_overrides, Command, Overrides, EXIT_INPUT};
use lqsens::config::{OutputFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "lqsens",
    about = "Stochastic linear-quadratic control: solve, adjoint sensitivities, self-checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a linear-quadratic control problem and report value, Riccati
    /// data, and Monte-Carlo verification residuals
    #[command(name = "solve-lq")]
    SolveLq(Common),
    /// Solve the mean-variance portfolio problem (minimal variance under a
    /// terminal-mean constraint)
    #[command(name = "solve-mv")]
    SolveMv(Common),
    /// Evaluate adjoint-based first-order sensitivities for each configured
    /// perturbation and cross-check against finite differences
    Sens(Common),
    /// Run the invariant self-checks at config scale; exit 1 on any failure
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Path to the JSON configuration document
    #[arg(long)]
    config: PathBuf,
    /// Override the Monte-Carlo seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of simulated paths
    #[arg(long)]
    paths: Option<usize>,
    /// Override the number of time steps
    #[arg(long)]
    steps: Option<usize>,
    /// Write the primary output to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format for tables and summaries
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> OutputFormat {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let (command, common) = match cli.cmd {
        Cmd::SolveLq(c) => (Command::SolveLq, c),
        Cmd::SolveMv(c) => (Command::SolveMv, c),
        Cmd::Sens(c) => (Command::Sens, c),
        Cmd::Check(c) => (Command::Check, c),
    };

    let mut cfg = match RunConfig::from_path(&common.config) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            process::exit(EXIT_INPUT);
        }
    };
    let overrides = Overrides {
        seed: common.seed,
        paths: common.paths,
        steps: common.steps,
        out: common.out,
        format: common.format.map(OutputFormat::from),
    };
    apply_overrides(&mut cfg, &overrides);

    match cli::run(command, &cfg) {
        Ok(code) => process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            process::exit(cli::exit_code(&err));
        }
    }
}
