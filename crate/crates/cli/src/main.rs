use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use morsekit::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "morsekit", version, about = "Relative Morse index and mod-2 Morse homology runs")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Parse the configuration and check growth admissibility.
    Validate(Common),
    /// Find and certify critical points.
    Critpoints(Common),
    /// Gradient-like field diagnostics and sample trajectories.
    Flow(Common),
    /// Connecting orbits between index-adjacent critical points.
    Orbits(Common),
    /// Mod-2 Morse homology.
    Homology(Common),
    /// Random-path Fredholm index lab.
    Fredholm(Common),
    /// Homology rank comparison across perturbations and couplings.
    Functorial(Common),
    /// Every stage listed in the configuration.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    config: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write trajectory and orbit CSV files next to the report.
    #[arg(long)]
    trajectories: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Validate(c) => (Command::Validate, c),
        Sub::Critpoints(c) => (Command::Critpoints, c),
        Sub::Flow(c) => (Command::Flow, c),
        Sub::Orbits(c) => (Command::Orbits, c),
        Sub::Homology(c) => (Command::Homology, c),
        Sub::Fredholm(c) => (Command::Fredholm, c),
        Sub::Functorial(c) => (Command::Functorial, c),
        Sub::All(c) => (Command::All, c),
    };
    match execute(command, &common) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("morsekit {}: {e:#}", command.name());
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command, flags: &Common) -> anyhow::Result<u8> {
    if let Some(n) = flags.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = RunConfig::load(&flags.config)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    let outcome = run(command, &cfg, flags.trajectories);
    let json = serde_json::to_string_pretty(&outcome.report)?;
    match &flags.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{json}"),
    }
    if flags.trajectories {
        let dir = flags.out.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
        for table in &outcome.tables {
            let path = dir.join(&table.name);
            std::fs::write(&path, table.to_bytes()?).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    if let (Some(reason), Some(message)) = (&outcome.report.reason, &outcome.report.message) {
        eprintln!("morsekit {}: {} ({reason}): {message}", command.name(), outcome.report.status);
    }
    Ok(outcome.exit_code as u8)
}
