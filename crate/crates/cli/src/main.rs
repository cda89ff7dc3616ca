use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use brier_align_cli::config::ExperimentConfig;
use brier_align_cli::error::{ConfigError, HarnessError};
use brier_align_cli::harness::{plan, run_to_dir, RunOptions};
use brier_align_cli::report;

#[derive(Parser)]
#[command(name = "brier-align", version, about = "Private and robust preference alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (no sweep axes).
    Run(RunArgs),
    /// Expand the configuration's axes into cells and run them all.
    Sweep(RunArgs),
    /// Aggregate run CSVs into a summary, a plot and the verdict table.
    Report {
        /// runs.csv files
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Tail level for the reported quantile
        #[arg(long, default_value_t = 0.05)]
        zeta: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long, env = "BRIER_ALIGN_JOBS")]
    jobs: Option<usize>,
    /// Refuse to run more than this many cells
    #[arg(long)]
    budget: Option<u64>,
    /// Record per-cell wall time (makes the CSV non-reproducible)
    #[arg(long)]
    timing: bool,
}

fn load(args: &RunArgs, sweep: bool) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(s) = args.master_seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    if !sweep && cfg.has_axes() {
        return Err(ConfigError::new("axes", "sweep axes are set; use the `sweep` verb").into());
    }
    if args.jobs == Some(0) {
        return Err(ConfigError::new("jobs", "must be at least 1").into());
    }
    Ok(cfg)
}

fn run(args: &RunArgs, sweep: bool) -> Result<(), HarnessError> {
    let cfg = load(args, sweep)?;
    let out = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    if sweep {
        let (_, cells) = plan(&cfg)?;
        eprintln!("sweep: {} cells", cells.len());
    }
    let opts = RunOptions { jobs: args.jobs, budget: args.budget, timing: args.timing };
    let output = run_to_dir(&cfg, &opts, &out)?;
    eprintln!("{} rows written to {}", output.records.len(), out.display());
    if !output.failures.is_empty() {
        for f in &output.failures {
            eprintln!("cell failed: {} {} n={} seed={}: {}", f.algorithm, f.setting, f.n, f.seed, f.error);
        }
        let total = output.failures.len() + output.records.len();
        return Err(HarnessError::Partial { failed: output.failures.len(), total });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a, false),
        Command::Sweep(a) => run(a, true),
        Command::Report { csv, out, zeta } => report::report(csv, *zeta, out).map(|(summary, verdicts)| {
            print!("{}", report::table(&summary));
            for v in &verdicts {
                println!("{v}");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
