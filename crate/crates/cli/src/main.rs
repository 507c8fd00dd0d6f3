//! `proxipush`: collect skin-driven datasets, train the contact estimators,
//! evaluate closed-loop pushing and audit stored trial logs.

mod commands;
mod outcome;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxipush::{ModelKind, SensingMode};

use outcome::{exit_code, Failure};

#[derive(Debug, Parser)]
#[command(name = "proxipush", version, about)]
struct Cli {
    /// Workbench config (TOML). Missing keys take their documented defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trials and training (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the skin-driven training and validation trials and write the dataset.
    Collect {
        /// Restrict the world to these objects (comma separated).
        #[arg(long, value_delimiter = ',')]
        objects: Vec<String>,
    },
    /// Train one estimator on a collected dataset.
    Train {
        /// Directory written by `collect`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        kind: ModelKind,
    },
    /// Run push trials on a target grid and write summary tables.
    Eval {
        /// Directory holding cle.model and cte.model.
        #[arg(long)]
        models: Option<PathBuf>,
        /// `train`, `val`, or a CSV file with `x,y` rows.
        #[arg(long, default_value = "train")]
        grid: String,
        /// skin, lidar or depth.
        #[arg(long, default_value = "lidar")]
        mode: SensingMode,
        /// Report every point contact as a line and vice versa.
        #[arg(long)]
        swap_point_line: bool,
    },
    /// Recompute a stored trial's metrics and check them against its summary.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let class = if code == 1 { "validation" } else { "runtime" };
            eprintln!("error[{class}]: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let global = commands::Global {
        config: cli.config,
        seed: cli.seed,
        force: cli.force,
        out: cli.out,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::validation("--jobs must be at least 1"));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    pool.install(|| match cli.command {
        Command::Collect { objects } => commands::collect(&global, &objects),
        Command::Train { dataset, kind } => commands::train(&global, &dataset, kind),
        Command::Eval {
            models,
            grid,
            mode,
            swap_point_line,
        } => commands::eval(&global, models.as_deref(), &grid, mode, swap_point_line),
        Command::Replay { log } => commands::replay(&log),
    })
}
