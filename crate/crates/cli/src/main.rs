use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use clap::{Parser, Subcommand};

use fedpob_cli::{cmd_agent, cmd_run, cmd_serve, cmd_summarize, cmd_sweep, SweepParam};

#[derive(Parser)]
#[command(
    name = "fedpob",
    about = "Federated bandit optimization experiments (score and preference feedback)",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, summary.csv, config.echo.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides FEDPOB_OUTPUT_ROOT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one parameter over a value list with seeded repeats.
    Sweep {
        config: PathBuf,
        /// Parameter to sweep: n_agents or D.
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values, e.g. 0,10,100,300,1000.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-agent statistics recomputed from a trace file.
    Summarize { trace: PathBuf },
    /// Host the central server for a cross-process federation.
    Serve {
        config: PathBuf,
        /// Bind address, e.g. 127.0.0.1:7070.
        #[arg(long)]
        bind: String,
        /// Seconds to wait for all agents to say hello.
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
    },
    /// Run a single agent against a remote server.
    Agent {
        config: PathBuf,
        /// Server address, e.g. 127.0.0.1:7070.
        #[arg(long)]
        connect: String,
        /// This agent's id in 0..n_agents.
        #[arg(long)]
        id: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let artifacts = cmd_run(&config, out.as_deref())?;
            println!("wrote {}", artifacts.trace_path.display());
            println!("wrote {}", artifacts.summary_path.display());
            println!("wrote {}", artifacts.echo_path.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            repeats,
            out,
        } => {
            let path = cmd_sweep(&config, param, &values, repeats, out.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Summarize { trace } => {
            print!("{}", cmd_summarize(&trace)?);
        }
        Command::Serve {
            config,
            bind,
            timeout_secs,
        } => {
            print!(
                "{}",
                cmd_serve(&config, &bind, Duration::from_secs(timeout_secs))?
            );
        }
        Command::Agent {
            config,
            connect,
            id,
            out,
        } => {
            let path = cmd_agent(&config, &connect, id, out.as_deref())?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
