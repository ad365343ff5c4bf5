use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tangle_fluid::app::{self, Overrides, RunError};
use tangle_fluid::config::Mode;

/// Tangle tip-count simulator and fluid-limit experiment runner.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Couple discrete seed data to the fluid initial condition and simulate traces.
    Simulate(RunArgs),
    /// Solve the fluid delay system and check its structural properties.
    Fluid(RunArgs),
    /// Sweep arrival rates and measure deviations from the fluid solution.
    Sweep(RunArgs),
    /// Check exponential relaxation of the fluid solution.
    Decay(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key-value (TOML) config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Arrival rate(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Proof-of-work delay.
    #[arg(long)]
    h: Option<f64>,
    /// Time horizon.
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Solver step; must divide h / len(u).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Base seed for all random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Fluid(a) => (Mode::Fluid, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::Decay(a) => (Mode::Decay, a),
    };
    match execute(mode, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(mode: Mode, args: RunArgs) -> anyhow::Result<ExitCode> {
    let text = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p)?),
        None => None,
    };
    let ov = Overrides {
        lambda: args.lambda,
        h: args.h,
        t_end: args.t_end,
        dt: args.dt,
        replicas: args.replicas,
        seed: args.seed,
        out: args.out,
    };
    let cfg = app::load_config(mode, text.as_deref(), &ov)?;
    let outcome = match app::run(&cfg, args.force) {
        Ok(o) => o,
        Err(e @ RunError::OutputExists(_)) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(3));
        }
        Err(e) => return Err(e.into()),
    };
    if outcome.success() {
        println!("{}: wrote {}", mode, outcome.out_dir.display());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed = outcome.failed_checks();
        println!("{}", serde_json::json!({ "success": false, "failed_checks": failed }));
        Ok(ExitCode::from(2))
    }
}
