use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use wplab_cli::commands::{self, Output};
use wplab_cli::config::Config;
use wplab_cli::output::Format;

#[derive(Parser)]
#[command(name = "wplab", version, about = "Numerical checks for fractional Schrodinger local smoothing")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve seeded data and tabulate norms per time slice.
    Propagate,
    /// Decompose seeded data into wave packets.
    Wavepacket,
    /// Polynomial partitioning of a Gaussian mixture.
    Partition,
    /// Broad and bilinear values at random points.
    Broad,
    /// Slice measure of a union of admissible tubes.
    Wolff,
    /// Pseudo-conformal chain of identities.
    Pconf,
    /// Dyadic-R local smoothing sweep.
    Sweep,
    /// Run an acceptance suite (exponents, packets, partition, broad, wolff, pconf, sweep, all).
    Accept {
        #[arg(default_value = "all")]
        suite: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Propagate => "propagate",
            Command::Wavepacket => "wavepacket",
            Command::Partition => "partition",
            Command::Broad => "broad",
            Command::Wolff => "wolff",
            Command::Pconf => "pconf",
            Command::Sweep => "sweep",
            Command::Accept { .. } => "accept",
        }
    }
}

fn emit(cli: &Cli, name: &str, out: &Output, seed: u64) -> Result<()> {
    let text = out.table.render(cli.format, seed);
    let ext = match cli.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{name}.{ext}"));
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            for (file, bytes) in &out.blobs {
                let path = dir.join(file);
                std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    let seed = cfg.seed();
    let name = cli.command.name();
    let (out, ok) = commands::with_threads(cli.threads, || -> Result<(Output, bool)> {
        Ok(match &cli.command {
            Command::Propagate => (commands::propagate(&cfg)?, true),
            Command::Wavepacket => (commands::wavepacket(&cfg)?, true),
            Command::Partition => (commands::partition_cmd(&cfg)?, true),
            Command::Broad => (commands::broad(&cfg)?, true),
            Command::Wolff => (commands::wolff(&cfg)?, true),
            Command::Pconf => (commands::pconf(&cfg)?, true),
            Command::Sweep => (commands::sweep(&cfg)?, true),
            Command::Accept { suite } => {
                let (out, reports) = commands::accept_cmd(&cfg, suite)?;
                for r in &reports {
                    eprint!("{r}");
                }
                (out, reports.iter().all(|r| r.pass))
            }
        })
    })??;
    emit(cli, name, &out, seed)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
