use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bangbang_core::harness::{run, ExperimentConfig, ExperimentKind, Verdict};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bangbang",
    version,
    about = "Bang-bang control stability experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the unperturbed problem and write the optimality snapshot.
    Solve(Common),
    /// Tikhonov regularization sweep.
    Tikhonov(Common),
    /// Linear cost perturbation sweep.
    RhoSweep(Common),
    /// Nonlinear perturbation sweep.
    ZetaSweep(Common),
    /// Structural exponent, coercivity probe and solution diagnostics.
    Diagnose(Common),
    /// Grid convergence on a manufactured solution.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configured one).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Nodes per axis on the finest grid.
    #[arg(long)]
    grid: Option<usize>,
}

fn configure(kind: ExperimentKind, args: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.experiment = kind;
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.grid {
        cfg.grid_sizes = vec![n];
    }
    if kind == ExperimentKind::Convergence && cfg.grid_sizes.len() == 1 {
        let n = cfg.grid_sizes[0];
        anyhow::ensure!(
            n >= 9 && (n - 1) % 4 == 0,
            "convergence needs a finest grid n = 4m + 1 with n >= 9, got {n}"
        );
        cfg.grid_sizes = vec![(n - 1) / 4 + 1, (n - 1) / 2 + 1, n];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<Verdict> {
    let (kind, args) = match &cli.command {
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::Tikhonov(a) => (ExperimentKind::TikhonovSweep, a),
        Command::RhoSweep(a) => (ExperimentKind::RhoSweep, a),
        Command::ZetaSweep(a) => (ExperimentKind::ZetaSweep, a),
        Command::Diagnose(a) => (ExperimentKind::Diagnostics, a),
        Command::Convergence(a) => (ExperimentKind::Convergence, a),
    };
    let cfg = configure(kind, args)?;
    let report = run(&cfg, Some(&cfg.output))?;
    report
        .write(&cfg.output)
        .with_context(|| format!("writing to {}", cfg.output.display()))?;
    print!("{}", report.report_text());
    Ok(report.verdict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
