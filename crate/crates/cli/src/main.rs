//! Batch scenario runner: each subcommand reproduces one experiment and
//! writes its artifacts under `--out`.  Exit codes: 0 pass, 1 check failure,
//! 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyperlab_cli::{emit_plots_data, run_scenario, ScenarioConfig, ScenarioError, ScenarioId};

#[derive(Parser)]
#[command(
    name = "hyperlab",
    about = "Hyperboloidal conformal-energy laboratory: scenario runner",
    version
)]
struct Cli {
    /// Optional key = value config overriding scenario defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (a per-scenario subdirectory is created)
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Seed for the deterministic point sweeps
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Multiplies every pass/fail tolerance
    #[arg(long, global = true, default_value_t = 1.0)]
    tolerance_scale: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// E1: conformal-energy conservation on the exact linear solution
    E1Conservation,
    /// E2: energy-inequality slack (forced linear + null quasilinear)
    E2ForcedInequality,
    /// E3: weighted decay fits on the null quasilinear run
    E3NullDecay,
    /// E4: null / non-null blow-up contrast sweep
    E4Contrast,
    /// E5: bootstrap ledger trace on the null run
    E5Bootstrap,
    /// E6: pointwise identity residual suite
    E6IdentitySuite,
    /// Re-shape a run directory into a tidy plot CSV
    EmitPlots {
        /// Completed scenario output directory
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    // thread count for the data-parallel sweeps
    if let Ok(n) = std::env::var("HYPERLAB_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();

    let id = match &cli.command {
        Command::E1Conservation => Some(ScenarioId::E1Conservation),
        Command::E2ForcedInequality => Some(ScenarioId::E2ForcedInequality),
        Command::E3NullDecay => Some(ScenarioId::E3NullDecay),
        Command::E4Contrast => Some(ScenarioId::E4Contrast),
        Command::E5Bootstrap => Some(ScenarioId::E5Bootstrap),
        Command::E6IdentitySuite => Some(ScenarioId::E6IdentitySuite),
        Command::EmitPlots { .. } => None,
    };

    match &cli.command {
        Command::EmitPlots { run_dir } => match emit_plots_data(run_dir) {
            Ok(path) => {
                println!("wrote {}", path.display());
                ExitCode::SUCCESS
            }
            Err(ScenarioError::NotFound(p)) => {
                eprintln!("error: no run artifacts under {}", p.display());
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        _ => {
            let id = id.expect("scenario subcommand");
            let out_dir = cli.out.join(id.label());
            let mut cfg = ScenarioConfig::new(id, out_dir);
            cfg.seed = cli.seed;
            cfg.tolerance_scale = cli.tolerance_scale;
            if let Some(path) = &cli.config {
                cfg = match cfg.with_config_file(path) {
                    Ok(cfg) => cfg,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                };
            }
            match run_scenario(&cfg) {
                Ok(report) => {
                    print!("{}", report.summary_text());
                    if report.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(ScenarioError::Usage(msg)) => {
                    eprintln!("usage error: {msg}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
