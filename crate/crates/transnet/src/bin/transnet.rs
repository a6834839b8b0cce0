use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use transnet::harness::{
    run_calibrate, run_convergence, run_dy_scaling, run_lipschitz, run_properties, CalibrateConfig,
    ExperimentConfig, HarnessError, Report, RunOptions, Status,
};
use transnet::transport_core::{Direction, Kind};

#[derive(Parser)]
#[command(name = "transnet", version, about = "ReLU-network surrogates for parametric transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV, JSON and SVG artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    kind: Option<Kind>,
    #[arg(long, global = true)]
    direction: Option<Direction>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build and certify networks over the eps ladder.
    Convergence,
    /// Characteristic network sizes for several d_y at fixed eps.
    DyScaling,
    /// Sampled Lipschitz certificates over the eps ladder.
    Lipschitz,
    /// Quadrature, contraction, algebra and interpolation invariant suites.
    Properties,
    /// Interpolation constants over a delta ladder.
    Calibrate,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli.config.as_ref().ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    ExperimentConfig::from_path(path)
}

fn run(cli: &Cli) -> Result<Report, HarnessError> {
    let opts = RunOptions { seed: cli.seed, kind: cli.kind, direction: cli.direction };
    match cli.command {
        Command::Convergence => run_convergence(&load(cli)?, &opts),
        Command::DyScaling => run_dy_scaling(&load(cli)?, &opts),
        Command::Lipschitz => run_lipschitz(&load(cli)?, &opts),
        Command::Properties => run_properties(cli.seed.unwrap_or(0)),
        Command::Calibrate => {
            let (cal, seed) = match &cli.config {
                Some(_) => {
                    let cfg = load(cli)?;
                    (cfg.calibrate.clone(), opts.seed(&cfg))
                }
                None => (CalibrateConfig::default(), cli.seed.unwrap_or(0)),
            };
            run_calibrate(&cal, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let path = match report.write(&cli.out) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for r in &report.rows {
        let status = r.status.map(|s| s.as_str()).unwrap_or("-");
        match &r.note {
            Some(n) => println!("{status:<4} {}  {n}", r.label),
            None => println!(
                "{status:<4} {}  err={}  size={}",
                r.label,
                r.measured_err.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into()),
                r.size.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
            ),
        }
    }
    for c in &report.checks {
        let status = if c.pass { Status::Pass } else { Status::Fail };
        println!("{:<4} {}  {:.6e} in [{:e}, {:e}]", status.as_str(), c.name, c.measured, c.lo, c.hi);
    }
    println!("wrote {} ({:.1} s)", path.display(), start.elapsed().as_secs_f64());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
