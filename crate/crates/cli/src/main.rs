//! Batch command-line front end for the stochastic Galerkin shallow water
//! solvers.
//!
//! Subcommands: `run` (one simulation), `preset list`, and `convergence`
//! (grid-refinement study). Exit codes: 0 success, 2 configuration error,
//! 3 solver abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgswe_cli::config::{self, Overrides, RawConfig, ResolvedConfig};
use sgswe_cli::runner::{self, CliError};
use sgswe_cli::{convergence, presets};

#[derive(Parser)]
#[command(name = "sgswe", version, about = "Stochastic Galerkin shallow water solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a config file and/or a preset.
    Run(RunArgs),
    /// Inspect built-in experiment presets.
    #[command(subcommand)]
    Preset(PresetCommand),
    /// Grid-refinement convergence study against a fine-grid reference.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file (strict keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset name; see `sgswe preset list`.
    #[arg(long)]
    preset: Option<String>,
    /// Numerical flux family: EC, ES1, or ES2.
    #[arg(long)]
    scheme: Option<String>,
    /// Interior cells per axis, e.g. `--mesh 100,50`.
    #[arg(long, value_parser = parse_mesh)]
    mesh: Option<(usize, usize)>,
    /// Terminal time.
    #[arg(long)]
    tend: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also write full coefficient dumps next to each snapshot.
    #[arg(long)]
    dump_coefficients: bool,
}

#[derive(Subcommand)]
enum PresetCommand {
    /// List the available presets.
    List,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated square grid sizes, e.g. `--grids 50,100,200`.
    #[arg(long, value_delimiter = ',', required = true)]
    grids: Vec<usize>,
    /// Reference grid size; must be a multiple of every test grid.
    #[arg(long, required = true)]
    ref_grid: usize,
}

fn parse_mesh(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected MX,MY".into());
    }
    let mx = parts[0].trim().parse().map_err(|_| "invalid MX")?;
    let my = parts[1].trim().parse().map_err(|_| "invalid MY")?;
    Ok((mx, my))
}

fn resolve_from(common: &CommonArgs, dump: bool) -> Result<ResolvedConfig, CliError> {
    let raw = match &common.config {
        Some(path) => config::load(path).map_err(CliError::Config)?,
        None => RawConfig::default(),
    };
    let overrides = Overrides {
        preset: common.preset.clone(),
        scheme: common.scheme.clone(),
        mesh: common.mesh,
        t_end: common.tend,
        output_dir: common.out.clone(),
        dump_coefficients: dump,
    };
    config::resolve(raw, overrides).map_err(CliError::Config)
}

fn run_command(args: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve_from(&args.common, args.dump_coefficients)?;
    let artifacts = runner::execute(&cfg)?;
    let stats = &artifacts.outcome.stats;
    println!(
        "{}: {} steps ({} halvings), dE/E = {:+.3e}, artifacts in {}",
        cfg.preset_name.as_deref().unwrap_or("custom run"),
        stats.steps,
        stats.halvings,
        artifacts.outcome.trace.relative_energy_change(),
        artifacts.dir.display()
    );
    Ok(())
}

fn convergence_command(args: &ConvergenceArgs) -> Result<(), CliError> {
    let cfg = resolve_from(&args.common, false)?;
    let rows = convergence::run_study(&cfg, &args.grids, args.ref_grid)?;
    println!("grid      error          order");
    for row in &rows {
        println!(
            "{:<9} {:<14.6e} {}",
            row.grid,
            row.error,
            row.order.as_deref().unwrap_or("-")
        );
    }
    println!(
        "table written to {}",
        cfg.output_dir.join("convergence.csv").display()
    );
    Ok(())
}

fn preset_list() {
    println!("available presets:");
    for (name, description) in presets::catalog() {
        println!("  {name:<32} {description}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Preset(PresetCommand::List) => {
            preset_list();
            Ok(())
        }
        Command::Convergence(args) => convergence_command(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
