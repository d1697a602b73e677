use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use qchannel::harness::{self, RunReport, ScanState, Scenario};
use qchannel::Error;

#[derive(Parser)]
#[command(
    name = "qchannel",
    version,
    about = "Entangled-photon key distribution channel simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Master seed; every random stream is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV files (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum State {
    Psi,
    Phi,
}

#[derive(Subcommand)]
enum Command {
    /// Delay-stage scan: Psi dip and calibration, or Phi oscillation range.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = State::Psi)]
        state: State,
    },
    /// Parity traces: uncalibrated, calibrated with drift, synchronized.
    Fig3 {
        #[command(flatten)]
        common: Common,
    },
    /// Time-bin key exchange between two stations.
    Qkd {
        #[command(flatten)]
        common: Common,
    },
    /// Control-plane key-exchange request followed by the granted session.
    Orchestrate {
        #[command(flatten)]
        common: Common,
    },
    /// Parity slope at each controller's operating point.
    ProbeOrder {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> qchannel::Result<RunReport> {
    let common = match &cli.command {
        Command::Scan { common, .. }
        | Command::Fig3 { common }
        | Command::Qkd { common }
        | Command::Orchestrate { common }
        | Command::ProbeOrder { common } => common,
    };
    let scenario = Scenario::load(&common.scenario)?;
    let (seed, out) = (common.seed, common.out.as_path());
    match &cli.command {
        Command::Scan { state, .. } => {
            let state = match state {
                State::Psi => ScanState::Psi,
                State::Phi => ScanState::Phi,
            };
            harness::cmd_scan(&scenario, state, seed, out)
        }
        Command::Fig3 { .. } => harness::cmd_fig3(&scenario, seed, out),
        Command::Qkd { .. } => harness::cmd_qkd(&scenario, seed, out),
        Command::Orchestrate { .. } => harness::cmd_orchestrate(&scenario, seed, out),
        Command::ProbeOrder { .. } => harness::cmd_probe_order(&scenario, seed, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(cli) {
        Ok(report) => {
            println!("command,{}", report.command);
            println!("seed,{}", report.seed);
            for (name, value) in &report.metrics {
                println!("{name},{value}");
            }
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for p in &report.outputs {
                println!("wrote {}", p.display());
            }
            println!("wall_time_s,{:.3}", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(Error::Orchestration(msg)) => {
            eprintln!("orchestration failed:\n{msg}");
            ExitCode::from(2)
        }
        Err(Error::Validation(list)) => {
            eprintln!("invalid scenario:");
            for m in list {
                eprintln!("  {m}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
