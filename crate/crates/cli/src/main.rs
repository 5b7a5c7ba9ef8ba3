use std::path::PathBuf;
use std::process::ExitCode;

use chaintube_cli::commands::{cmd_compare, cmd_simulate, cmd_synth, EXIT_USAGE};
use chaintube_cli::config::{Overrides, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Chain-of-tubes distributed MPC: synthesis, closed-loop simulation and
/// controller comparison.
#[derive(Parser)]
#[command(name = "chaintube", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize and validate the tube design.
    Synth(Common),
    /// Run one controller in closed loop and write its CSV log.
    Simulate(Common),
    /// Run all four controllers and write the comparison report.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// chain, cmpc, tmpc or dempc.
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// Prediction horizon N.
    #[arg(long)]
    horizon: Option<usize>,
    /// Inner re-solve period T.
    #[arg(long)]
    period: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(c: &Common) -> Result<RunConfig, String> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| format!("error: {e}"))?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        controller: c.controller.clone(),
        steps: c.steps,
        horizon: c.horizon,
        period: c.period,
        out: c.out.clone(),
    });
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (common, cmd): (&Common, fn(&RunConfig) -> _) = match &cli.command {
        Command::Synth(c) => (c, cmd_synth),
        Command::Simulate(c) => (c, cmd_simulate),
        Command::Compare(c) => (c, cmd_compare),
    };
    let cfg = match load(common) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let out = cmd(&cfg);
    if out.code == 0 {
        println!("{}", out.text.trim_end());
    } else {
        eprintln!("{}", out.text.trim_end());
    }
    ExitCode::from(out.code)
}
