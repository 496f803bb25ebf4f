use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mee_core::runner::{self, RunError};
use mee_core::SimConfig;

#[derive(Parser)]
#[command(name = "mee", version, about = "Micro-ecology engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation into a fresh directory.
    Run {
        /// TOML config; built-in defaults when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(short, long)]
        ticks: Option<u64>,
        #[arg(short, long)]
        seed: Option<u64>,
    },
    /// Compute every prediction measurement over one or more run directories.
    Analyze {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where report.json and the figure CSVs go; defaults to the first run.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the baseline oracle and check the guard inequality.
    Validate {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Continue from a snapshot into a new directory.
    Resume {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(short, long)]
        ticks: u64,
    },
}

fn load(config: Option<&Path>) -> Result<SimConfig, RunError> {
    Ok(match config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    })
}

fn limit_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("MEE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("MEE_THREADS ignored: {e}");
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Run { config, out, ticks, seed } => {
            let summary = runner::run(load(config.as_deref())?, &out, ticks, seed)?;
            println!(
                "ticks {}..{} population {} final_hash {}{}",
                summary.start_tick,
                summary.end_tick,
                summary.population,
                summary.final_hash,
                if summary.collapsed { " (collapsed)" } else { "" }
            );
        }
        Command::Analyze { runs, out } => {
            let out = out.unwrap_or_else(|| runs[0].clone());
            let report = runner::analyze(&runs, &out)?;
            for r in &report.runs {
                let fmt = |t: Option<mee_core::metrics::TrendSummary>| {
                    t.map_or("n/a".to_string(), |t| format!("{:.4} -> {:.4}", t.early, t.late))
                };
                println!(
                    "{}: seed {} noise_fraction {} entropy {} trophic levels {:?}",
                    r.dir.display(),
                    r.master_seed,
                    fmt(r.noise_avoidance),
                    fmt(r.specialization),
                    r.trophic_levels
                );
            }
            println!("report: {}", out.join("report.json").display());
        }
        Command::Validate { config } => {
            let cfg = load(config.as_deref())?;
            cfg.check()?;
            let (_, report) = runner::validate(&cfg)?;
            print!("{report}");
            println!("ok: worst margin {:.6}", report.worst_margin());
        }
        Command::Resume { snapshot, out, ticks } => {
            let summary = runner::resume(&snapshot, &out, ticks)?;
            println!("ticks {}..{} final_hash {}", summary.start_tick, summary.end_tick, summary.final_hash);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    limit_threads();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let RunError::Guard(report) = &e {
                eprint!("{report}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
