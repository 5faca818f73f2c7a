//! Experiment CLI: one subcommand per experiment family.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use isac_cli::spec::{ExperimentFamily, ExperimentSpec, SolverArm, SweepSpec};
use isac_cli::{emit_results, run_experiment};

#[derive(Parser)]
#[command(
    name = "isac-exp",
    about = "Seeded experiment runner for movable-element IRS-assisted ISAC studies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment specification file (TOML); flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for CSV data and the manifest.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Base seed; per-trial seeds derive deterministically from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo trials per sweep point.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    /// Experiment name used in output file names.
    #[arg(long)]
    name: Option<String>,
    /// Solver arm: algorithm2, fixed-layout, or sequential.
    #[arg(long, default_value = "algorithm2")]
    solver: String,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form bound curves over element spacing (wavelengths).
    BoundsSweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Spacing grid in wavelengths.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5])]
        grid: Vec<f64>,
    },
    /// Single-user optimality study over element counts.
    SingleUser {
        #[command(flatten)]
        common: CommonArgs,
        /// Element-count grid.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4.0, 9.0, 16.0])]
        grid: Vec<f64>,
    },
    /// Multi-user convergence traces and a beampattern map.
    MultiUser {
        #[command(flatten)]
        common: CommonArgs,
        /// Per-user rate thresholds, bits/s/Hz.
        #[arg(long, value_delimiter = ',')]
        rate_thresholds: Option<Vec<f64>>,
    },
    /// Sensing coverage probability over an SCNR threshold grid (dB).
    Coverage {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])]
        grid: Vec<f64>,
    },
    /// Sensing-communication trade-off over rate thresholds (bits/s/Hz).
    Tradeoff {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3, 0.4, 0.5])]
        grid: Vec<f64>,
    },
    /// Robustness to movement errors (wavelengths) or CSI errors.
    Robustness {
        #[command(flatten)]
        common: CommonArgs,
        /// "movement" or "csi".
        #[arg(long, default_value = "movement")]
        variable: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.01, 0.02, 0.03])]
        grid: Vec<f64>,
    },
}

fn parse_solver(text: &str) -> Result<SolverArm, String> {
    match text {
        "algorithm2" => Ok(SolverArm::Algorithm2),
        "fixed-layout" => Ok(SolverArm::FixedLayout),
        "sequential" => Ok(SolverArm::Sequential),
        other => Err(format!("unknown solver arm '{other}'")),
    }
}

fn build_spec(
    common: &CommonArgs,
    family: ExperimentFamily,
    default_name: &str,
    variable: &str,
    grid: Vec<f64>,
    rate_thresholds: Option<Vec<f64>>,
) -> Result<ExperimentSpec, String> {
    if let Some(path) = &common.spec {
        let text = std::fs::read_to_string(path).map_err(|e| format!("read spec: {e}"))?;
        return ExperimentSpec::from_toml_str(&text).map_err(|e| e.to_string());
    }
    let spec = ExperimentSpec {
        name: common.name.clone().unwrap_or_else(|| default_name.to_string()),
        family,
        solver: parse_solver(&common.solver)?,
        trials: common.trials,
        base_seed: common.seed,
        sweep: SweepSpec {
            variable: variable.to_string(),
            grid,
        },
        scene: None,
        rate_thresholds,
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, spec) = match &cli.command {
        Command::BoundsSweep { common, grid } => (
            common,
            build_spec(common, ExperimentFamily::BoundsSweep, "bounds", "spacing", grid.clone(), None),
        ),
        Command::SingleUser { common, grid } => (
            common,
            build_spec(common, ExperimentFamily::SingleUser, "single_user", "n_i", grid.clone(), None),
        ),
        Command::MultiUser {
            common,
            rate_thresholds,
        } => (
            common,
            build_spec(
                common,
                ExperimentFamily::MultiUser,
                "multi_user",
                "none",
                vec![0.0],
                rate_thresholds.clone(),
            ),
        ),
        Command::Coverage { common, grid } => (
            common,
            build_spec(common, ExperimentFamily::Coverage, "coverage", "threshold_db", grid.clone(), None),
        ),
        Command::Tradeoff { common, grid } => (
            common,
            build_spec(common, ExperimentFamily::Tradeoff, "tradeoff", "rate_threshold", grid.clone(), None),
        ),
        Command::Robustness {
            common,
            variable,
            grid,
        } => (
            common,
            build_spec(common, ExperimentFamily::Robustness, "robustness", variable, grid.clone(), None),
        ),
    };
    let spec = match spec {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if common.parallelism > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(common.parallelism)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let start = Instant::now();
    match run_experiment(&spec) {
        Ok(output) => {
            let wall = start.elapsed().as_secs_f64();
            match emit_results(&spec, &output, &common.out, wall) {
                Ok(paths) => {
                    for p in paths {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
