use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spillfree::cli;
use spillfree::model::PhysicalParams;

#[derive(Parser, Debug)]
#[command(
    version,
    about = "Spill-free feedback stabilization of a moving tank of viscous liquid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario and write its time series, snapshots and summary.
    Run { config: PathBuf },
    /// Run a parameter grid or budget ladder from a sweep file.
    Sweep { config: PathBuf },
    /// Plan a transfer without simulating and print the plan as JSON.
    Design {
        #[arg(long)]
        g: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long = "L")]
        length: f64,
        #[arg(long = "m")]
        mass: f64,
        #[arg(long)]
        hmax: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        xi0: f64,
    },
    /// Re-check a written time series against its scenario file.
    Verify { trajectory: PathBuf, config: PathBuf },
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let code = match args.command {
        Command::Run { config } => cli::run(&config),
        Command::Sweep { config } => cli::sweep::sweep(&config),
        Command::Design {
            g,
            mu,
            length,
            mass,
            hmax,
            epsilon,
            xi0,
        } => {
            let params = PhysicalParams {
                g,
                mu,
                length,
                mass,
                h_max: hmax,
            };
            cli::design(&params, epsilon, xi0)
        }
        Command::Verify { trajectory, config } => cli::verify(&trajectory, &config),
    };
    ExitCode::from(code as u8)
}
