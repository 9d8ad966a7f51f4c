//! `hsphere`: batch front end for the prescribed-mean-curvature sphere solvers.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Parser, ValueEnum};
use serde_json::json;

use crate::commands::Ctx;
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "hsphere", version, about = "Variational solvers for prescribed-mean-curvature spheres")]
struct Cli {
    command: Command,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Solve,
    Minmax,
    Continue,
    Index,
    Bomega,
    Diagnose,
    ScanLambda,
    MeshExport,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Minmax => "minmax",
            Command::Continue => "continue",
            Command::Index => "index",
            Command::Bomega => "bomega",
            Command::Diagnose => "diagnose",
            Command::ScanLambda => "scan-lambda",
            Command::MeshExport => "mesh-export",
        }
    }
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure::Config(e.into())
    }

    pub fn solver(e: impl Into<anyhow::Error>) -> Self {
        Failure::Solver(e.into())
    }

    pub fn io(e: impl Into<anyhow::Error>) -> Self {
        Failure::Io(e.into())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Solver(_) => "solver",
            Failure::Io(_) => "io",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(e) | Failure::Solver(e) | Failure::Io(e) => format!("{e:#}"),
        }
    }
}

fn run(cli: &Cli) -> Result<Option<Failure>, Failure> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut cfg = RunConfig::load(&cli.config).map_err(|e| {
        if cli.config.is_file() {
            Failure::Config(e)
        } else {
            Failure::Io(e)
        }
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(anyhow!("--threads: {e}")))?;
    }
    let setup = cfg.setup().map_err(Failure::Config)?;
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))
        .map_err(Failure::Io)?;
    let ctx = Ctx { cfg: &cfg, setup: &setup, out: &cli.out };
    let (result, failure) = match cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Minmax => commands::minmax(&ctx),
        Command::Continue => commands::continuation(&ctx),
        Command::Index => commands::index(&ctx),
        Command::Bomega => commands::bomega(&ctx),
        Command::Diagnose => commands::diagnose_cmd(&ctx),
        Command::ScanLambda => commands::scan_lambda(&ctx),
        Command::MeshExport => commands::mesh_export(&ctx),
    }?;
    let report = json!({
        "command": cli.command.name(),
        "config": cfg,
        "status": failure.as_ref().map_or("ok", |f| f.kind()),
        "result": result,
    });
    write_json(&cli.out.join("report.json"), &report)?;
    let metadata = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
        "config_path": cli.config,
    });
    write_json(&cli.out.join("metadata.json"), &metadata)?;
    if !cli.quiet {
        println!("{}: {} ({})", cli.command.name(), report["status"].as_str().unwrap_or("?"), cli.out.display());
    }
    Ok(failure)
}

fn write_json(path: &std::path::Path, v: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(Failure::Io)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let failure = match run(&cli) {
        Ok(f) => f,
        Err(f) => Some(f),
    };
    match failure {
        None => ExitCode::SUCCESS,
        Some(f) => {
            eprintln!("{}", json!({ "error": f.kind(), "code": f.code(), "message": f.message() }));
            ExitCode::from(f.code())
        }
    }
}
