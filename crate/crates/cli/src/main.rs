//! `qcurv`: batch front end over `qcurv-core`.
//!
//! Exit codes: 0 success, 2 config error, 3 solver or quadrature failure,
//! 1 for i/o trouble.

mod commands;
mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::commands::Outputs;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "qcurv", version, about = "Singular fractional Q-curvature numerics")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the config tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,

    #[arg(long, global = true, env = "QCURV_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Cylindrical kernel table and fitted decay rate.
    Kernel,
    /// Periodic solutions over a list of periods.
    Delaunay,
    /// Interaction constants and the Psi table.
    Constants,
    /// Balancing parameters and the Jacobian report.
    Balance,
    /// Approximate solution, weighted residual and beta projections.
    AssembleResidual,
    /// Explicit inverse of a tower operator.
    Toda,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Delaunay => "delaunay",
            Command::Constants => "constants",
            Command::Balance => "balance",
            Command::AssembleResidual => "assemble-residual",
            Command::Toda => "toda",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(t) = cli.tol {
        cfg.tol = t;
    }
    cfg.validate_common()?;
    Ok(cfg)
}

/// Writes through a temporary name and renames, so readers never see partial files.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let cfg = load(cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let params = qcurv_core::derive_params(cfg.n, cfg.sigma)?;
    let out: Outputs = match cli.command {
        Command::Kernel => commands::kernel(&cfg, &params)?,
        Command::Delaunay => commands::delaunay(&cfg, &params)?,
        Command::Constants => commands::constants(&cfg, &params)?,
        Command::Balance => commands::balance(&cfg, &params)?,
        Command::AssembleResidual => commands::assemble_residual(&cfg, &params)?,
        Command::Toda => commands::toda(&cfg)?,
    };
    let canonical = serde_json::to_vec(&cfg)?;
    let hash = format!("{:x}", Sha256::digest(&canonical));
    let files: Vec<String> = out.files.iter().map(|f| f.0.clone()).collect();
    let digests: serde_json::Map<String, serde_json::Value> =
        out.files.iter().map(|(n, b)| (n.clone(), json!(format!("{:x}", Sha256::digest(b))))).collect();
    let manifest = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": hash,
        "seed": cfg.seed,
        "params": params,
        "constants": out.constants,
        "files": digests,
        "config": cfg,
    });
    fs::create_dir_all(&cli.out)?;
    for (name, bytes) in &out.files {
        write_atomic(&cli.out, name, bytes)?;
    }
    let mut m = serde_json::to_vec_pretty(&manifest)?;
    m.push(b'\n');
    write_atomic(&cli.out, "manifest.json", &m)?;
    Ok(files)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", cli.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
