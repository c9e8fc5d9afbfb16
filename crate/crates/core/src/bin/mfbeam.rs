use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mfbeam::cli;
use mfbeam::config::{MethodChoice, RunConfig, VariantChoice};
use mfbeam::Error;

#[derive(Parser)]
#[command(name = "mfbeam", version, about = "Mean-field beam tracking solver")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for (phi, zeta, eta, chi) and write trajectories.
    Solve(Common),
    /// Tabulate the price of anarchy for both methods.
    Poa(Common),
    /// Simulate the closed-loop population.
    Simulate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Mfg,
    Mfc,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    FixedPoint,
    Newton,
    Both,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "MFBEAM_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated agents.
    #[arg(long)]
    agents: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(v) = self.variant {
            cfg.solver.variant = match v {
                VariantArg::Mfg => VariantChoice::Mfg,
                VariantArg::Mfc => VariantChoice::Mfc,
                VariantArg::Both => VariantChoice::Both,
            };
        }
        if let Some(m) = self.method {
            cfg.solver.method = match m {
                MethodArg::FixedPoint => MethodChoice::FixedPoint,
                MethodArg::Newton => MethodChoice::Newton,
                MethodArg::Both => MethodChoice::Both,
            };
        }
        if let Some(s) = self.seed {
            cfg.simulate.seed = s;
        }
        if let Some(n) = self.agents {
            cfg.simulate.agents = n;
        }
        cfg.check_options()?;
        Ok(cfg)
    }
}

fn run(args: Args) -> Result<Vec<PathBuf>, Error> {
    match args.command {
        Command::Solve(c) => cli::cmd_solve(&c.resolve()?, &c.out),
        Command::Poa(c) => {
            let (table, files) = cli::cmd_poa(&c.resolve()?, &c.out)?;
            for e in &table.entries {
                println!(
                    "{:<12} {:<14} PoA = {:.4}  (J_mfg = {:.6e}, J_mfc = {:.6e})",
                    e.method.as_str(),
                    format!("{:?}", e.definition),
                    e.poa,
                    e.j_mfg,
                    e.j_mfc
                );
            }
            Ok(files)
        }
        Command::Simulate(c) => cli::cmd_simulate(&c.resolve()?, &c.out),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
