//! Thin command-line wrapper over [`levyhom::pipeline`]: loads a JSON
//! experiment configuration, runs the requested stage (and its
//! prerequisites), writes report.json / tables/*.csv / fields/*.bin into the
//! output directory, and exits 0 iff every internal check passed (2 on
//! errors such as inadmissible parameters or a failed stage).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use levyhom::pipeline::{run_and_write, ExperimentConfig, Subcommand};

#[derive(Parser)]
#[command(
    name = "levyhom",
    about = "Periodic homogenization of stable-noise SDEs with singular drift",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (default: the config's out_dir, else ./out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the master seed of the configuration.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads of the Monte Carlo stage (default: all cores).
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Build and enhance the drift.
    Enhance(RunArgs),
    /// Solve for the invariant density.
    Invariant(RunArgs),
    /// Solve the corrector equation.
    Corrector(RunArgs),
    /// Assemble the effective model (diffusivity or stable limit).
    Diffusivity(RunArgs),
    /// Fit the exponential relaxation rate.
    Gap(RunArgs),
    /// Monte Carlo central-limit verification.
    Clt(RunArgs),
    /// Multiscale PDE comparison along an epsilon ladder.
    Pde(RunArgs),
    /// Run every stage.
    All(RunArgs),
}

impl Command {
    fn split(self) -> (Subcommand, RunArgs) {
        match self {
            Command::Enhance(a) => (Subcommand::Enhance, a),
            Command::Invariant(a) => (Subcommand::Invariant, a),
            Command::Corrector(a) => (Subcommand::Corrector, a),
            Command::Diffusivity(a) => (Subcommand::Diffusivity, a),
            Command::Gap(a) => (Subcommand::Gap, a),
            Command::Clt(a) => (Subcommand::Clt, a),
            Command::Pde(a) => (Subcommand::Pde, a),
            Command::All(a) => (Subcommand::All, a),
        }
    }
}

fn run(sub: Subcommand, args: RunArgs) -> Result<bool, levyhom::Error> {
    if let Some(k) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| levyhom::Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let report = run_and_write(sub, &cfg, &out)?;
    for check in &report.checks {
        let verdict = if check.pass { "pass" } else { "FAIL" };
        println!(
            "{verdict}  {}  value {:.6e}  threshold {:.6e}",
            check.name, check.value, check.threshold
        );
    }
    println!(
        "{}: report written to {}",
        if report.pass { "ok" } else { "FAILED" },
        out.join("report.json").display()
    );
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, args) = cli.command.split();
    match run(sub, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
