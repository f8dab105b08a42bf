//! `radflow`: command-line driver for the Monte Carlo experiments.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::{CommandName, Task};
use config::{Overrides, RunConfig};

const USAGE: u8 = 2;
const RUNTIME: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "radflow", version, about = "Monte Carlo lab for Brownian flows with singular radial drift")]
struct Cli {
    /// JSON config file; command-line values override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "RADFLOW_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved config and exit without running.
    #[arg(long, global = true)]
    emit_config: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug)]
struct Assignments {
    /// Parameter overrides, e.g. `n=2 region.level=1.5`.
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    Flow(Assignments),
    Hitprob(Assignments),
    Sweep(Assignments),
    Ladder(Assignments),
    Bessel(Assignments),
    CtCheck(Assignments),
    Cover(Assignments),
    Occupation(Assignments),
    DriftAccum(Assignments),
}

impl Sub {
    fn split(self) -> (CommandName, Vec<String>) {
        match self {
            Sub::Flow(a) => (CommandName::Flow, a.set),
            Sub::Hitprob(a) => (CommandName::Hitprob, a.set),
            Sub::Sweep(a) => (CommandName::Sweep, a.set),
            Sub::Ladder(a) => (CommandName::Ladder, a.set),
            Sub::Bessel(a) => (CommandName::Bessel, a.set),
            Sub::CtCheck(a) => (CommandName::CtCheck, a.set),
            Sub::Cover(a) => (CommandName::Cover, a.set),
            Sub::Occupation(a) => (CommandName::Occupation, a.set),
            Sub::DriftAccum(a) => (CommandName::DriftAccum, a.set),
        }
    }
}

fn defaults_help(name: CommandName) -> String {
    let mut s = String::from("Parameters (KEY=VALUE; defaults shown):\n");
    if let serde_json::Value::Object(map) = Task::defaults(name).params_value() {
        for (k, v) in map {
            s.push_str(&format!("  {k} = {v}\n"));
        }
    }
    s
}

fn cli_command() -> clap::Command {
    let mut cmd = Cli::command();
    for name in CommandName::ALL {
        cmd = cmd.mut_subcommand(name.as_str(), |c| c.about(name.about()).after_help(defaults_help(name)));
    }
    cmd
}

fn main() -> ExitCode {
    let matches = cli_command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (name, assignments) = cli.command.split();
    let file = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => Some(text),
            Err(e) => {
                eprintln!("radflow: cannot read {}: {e}", path.display());
                return ExitCode::from(USAGE);
            }
        },
        None => None,
    };
    let flags = Overrides { seed: cli.seed, out: cli.out, workers: cli.workers, assignments };
    let cfg = match RunConfig::resolve(name, file.as_deref(), &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("radflow: config error: {e}");
            return ExitCode::from(USAGE);
        }
    };
    if cli.emit_config {
        print!("{}", cfg.to_json());
        return ExitCode::SUCCESS;
    }
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("radflow: {e}");
            ExitCode::from(RUNTIME)
        }
    }
}

fn run(cfg: &RunConfig) -> Result<(), Box<dyn std::error::Error>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build()?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("radflow-out"));
    eprintln!("radflow: {} (seed {}, {} workers)", cfg.command().as_str(), cfg.seed, pool.current_num_threads());
    let start = Instant::now();
    let artifacts = pool.install(|| cfg.task.run(cfg.seed))?;
    let wall = start.elapsed().as_secs_f64();
    for path in output::persist(&dir, cfg, pool.current_num_threads(), wall, &artifacts)? {
        eprintln!("radflow: wrote {}", path.display());
    }
    Ok(())
}
