use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use pona_core::dataset_io::write_fixture;
use pona_core::experiment::{summarize, sweep_value, SweepVariable};
use pona_core::{ExperimentConfig, ResultRow, Runner};

#[derive(Parser)]
#[command(name = "pona", version, about = "Off-policy learning experiments with new actions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (sweep value, seed, method) job of a config and write the results CSV.
    Run(RunArgs),
    /// Like `run`, for configs that sweep `rho_lower`.
    SweepRho(RunArgs),
    /// Write the miniature users/items/rewards fixture into a directory.
    GenFixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Override the number of replicate seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Override the results CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "PONA_JOBS")]
    jobs: Option<usize>,
}

fn load(path: &Path) -> Result<ExperimentConfig, String> {
    ExperimentConfig::from_file(path).map_err(|e| e.to_string())
}

fn run(args: RunArgs, rho_only: bool) -> Result<(), String> {
    let mut config = load(&args.config)?;
    if rho_only && config.sweep.variable != SweepVariable::RhoLower {
        return Err(format!(
            "{}: sweep-rho needs sweep.variable = \"rho_lower\", found \"{}\"",
            args.config.display(),
            config.sweep.variable.name()
        ));
    }
    if config.name.is_empty() {
        config.name = args
            .config
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if let Some(out) = args.out {
        config.output.path = out;
    }
    config.validate().map_err(|e| e.to_string())?;
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    info!(
        "running {} ({} seeds, {} sweep values)",
        config.name,
        config.seeds,
        config.sweep.values.len()
    );
    let runner = Runner::new(config).map_err(|e| e.to_string())?;
    let rows = runner.run_to_file().map_err(|e| e.to_string())?;
    print_summary(&rows);
    println!("wrote {} rows to {}", rows.len(), runner.config().output.path.display());
    Ok(())
}

fn print_summary(rows: &[ResultRow]) {
    let name = rows.first().map_or("value", |r| r.sweep_name);
    println!(
        "{name:>12} {:>8} {:>18} {:>18} {:>7}",
        "method", "norm_overall", "new_mass", "errors"
    );
    let cell = |s: Option<pona_core::experiment::Stat>| {
        s.map_or("null".to_string(), |s| format!("{:.4}±{:.4}", s.mean, s.std_error))
    };
    for ((key, method), s) in summarize(rows) {
        println!(
            "{:>12} {:>8} {:>18} {:>18} {:>7}",
            sweep_value(key),
            method.name(),
            cell(s.norm_overall),
            cell(s.new_action_mass),
            s.errors
        );
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        error!(
            "{}={} seed {} {}: {}",
            r.sweep_name,
            r.sweep_value,
            r.seed,
            r.method,
            r.error.as_deref().unwrap_or_default()
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args, false),
        Command::SweepRho(args) => run(args, true),
        Command::GenFixture { dir, seed } => write_fixture(&dir, seed)
            .map(|paths| {
                println!(
                    "wrote {}, {}, {}",
                    paths.users.display(),
                    paths.items.display(),
                    paths.rewards.display()
                )
            })
            .map_err(|e| e.to_string()),
        Command::Validate { config } => load(&config).map(|c| {
            println!(
                "{}: ok ({} methods, {} sweep values, {} seeds)",
                config.display(),
                c.methods.len(),
                c.sweep.values.len(),
                c.seeds
            )
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
