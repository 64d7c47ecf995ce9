//! `corl-bench` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig};
use crate::error::BenchError;
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "corl-bench", version, about = "Continual offline RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the task datasets of every seed.
    GenData(Common),
    /// Learn the task sequence for every seed and write reports.
    Run(RunArgs),
    /// Run every point of the config's sweep grid.
    Sweep(RunArgs),
    /// Recompute summary.json from an existing raw.csv.
    Report(ReportArgs),
    /// List the dataset provenance of a saved replay buffer.
    InspectBuffer(InspectArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Continue from per-seed checkpoints left by an interrupted run.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding raw.csv; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    buffer: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn resolve(c: &Common) -> Result<(ExperimentConfig, Vec<u64>, PathBuf), BenchError> {
    let cfg = load_config(&c.config)?;
    let seeds = c.seeds.clone().unwrap_or_else(|| cfg.seeds.clone());
    let mut check = cfg.clone();
    check.seeds = seeds.clone();
    check.validate()?;
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, seeds, out))
}

fn json_line(v: &impl serde::Serialize) -> String {
    serde_json::to_string(v).expect("summary serializes")
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), BenchError> {
    let io = |e: std::io::Error| BenchError::Core(e.into());
    match cli.command {
        Command::GenData(c) => {
            let (cfg, seeds, dir) = resolve(&c)?;
            for p in run::gen_data(&cfg, &seeds, &dir)? {
                writeln!(out, "{}", p.display()).map_err(io)?;
            }
        }
        Command::Run(a) => {
            let (cfg, seeds, dir) = resolve(&a.common)?;
            let s = run::run_experiment(&cfg, &seeds, &dir, a.resume)?;
            writeln!(out, "{}", json_line(&s)).map_err(io)?;
        }
        Command::Sweep(a) => {
            let (cfg, seeds, dir) = resolve(&a.common)?;
            for (p, s) in run::run_sweep(&cfg, &seeds, &dir, a.resume)? {
                writeln!(out, "{} {}", p.point_name(), json_line(&s)).map_err(io)?;
            }
        }
        Command::Report(a) => {
            let cfg = a.config.as_deref().map(load_config).transpose()?;
            let dir = match (&a.out, &cfg) {
                (Some(d), _) => d.clone(),
                (None, Some(c)) => c.output_dir.clone(),
                (None, None) => return Err(BenchError::Usage("report needs --out or --config".into())),
            };
            let s = run::report(&dir, cfg.as_ref())?;
            writeln!(out, "{}", json_line(&s)).map_err(io)?;
        }
        Command::InspectBuffer(a) => {
            if let Some(c) = &a.config {
                load_config(c)?;
            }
            write!(out, "{}", run::inspect_buffer(&a.buffer)?).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
