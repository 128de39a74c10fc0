use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use specrf_cli::run::{
    effective_seed, output_dir, write_outputs, EXIT_CONFIG, EXIT_VIOLATION, SEED_ENV,
};
use specrf_cli::{exit_code, run_experiment, Preset, RunConfig};

/// Random feature regression with spectral regularization: experiments.
#[derive(Debug, Parser)]
#[command(name = "specrf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration (a manifest from an earlier run also works)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides SPECRF_SEED and the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Large presets: n = 5000, 50 repetitions
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a train/test split and write it as CSV
    Gen,
    /// Fit models over feature counts and regularization levels
    Fit,
    /// Mean test error over a (M, T) grid
    SweepHeatmap {
        /// Also write heatmap.svg
        #[arg(long)]
        svg: bool,
    },
    /// Excess risk along the theoretical schedule and its fitted slope
    Rates,
    /// Check filter axioms and concentration events
    Verify,
    /// Network versus kernel gradient descent across widths
    NtkCompare,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Fit => "fit",
            Command::SweepHeatmap { .. } => "sweep-heatmap",
            Command::Rates => "rates",
            Command::Verify => "verify",
            Command::NtkCompare => "ntk-compare",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> specrf::Result<i32> {
    let common = cli.common;
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(specrf::Error::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| specrf::Error::Internal(format!("thread pool: {e}")))?;
    }
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    config.seed = effective_seed(config.seed, common.seed, env.as_deref())?;
    if let Command::SweepHeatmap { svg: true } = cli.command {
        config.svg = true;
    }
    let preset = if common.paper_scale {
        Preset::Paper
    } else {
        Preset::Desk
    };
    let name = cli.command.name();
    let dir = output_dir(common.out, &config, name);
    let run = run_experiment(name, config.resolve(preset)?)?;
    write_outputs(&dir, &run)?;
    for note in &run.outcome.notes {
        eprintln!("note: {note}");
    }
    for v in &run.outcome.violations {
        eprintln!("violation: {v}");
    }
    eprintln!("wrote {}", dir.display());
    Ok(if run.outcome.violations.is_empty() {
        0
    } else {
        EXIT_VIOLATION
    })
}
