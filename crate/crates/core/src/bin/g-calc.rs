use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use g_calc::builtins::Builtins;
use g_calc::config::ExperimentConfig;
use g_calc::experiments::ExperimentRegistry;
use g_calc::output::write_report;
use g_calc::Error;

#[derive(Parser)]
#[command(
    name = "g-calc",
    version,
    about = "Sublinear expectations, variational checks and large deviations under volatility uncertainty"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Caps the number of worker threads.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the named functionals, flows and experiment kinds.
    ListBuiltins,
}

fn run(
    config: PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> Result<bool, Error> {
    let builtins = Builtins::default();
    let registry = ExperimentRegistry::default();
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    registry.validate(&cfg, &builtins)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("g-calc-out/{}", cfg.experiment.name())));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers:?} workers: {e}")))?;
    let start = std::time::Instant::now();
    let report = pool.install(|| registry.run(&cfg, &builtins))?;
    info!(
        "{} finished in {:.2?}",
        cfg.experiment.name(),
        start.elapsed()
    );
    let mut echo = cfg.clone();
    echo.output_dir = None;
    write_report(&dir, &report, cfg.seed, &echo)?;
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("wrote {}", dir.join("summary.json").display());
    for c in report.failed() {
        eprintln!("invariant violated: {} ({})", c.name, c.detail);
    }
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListBuiltins => {
            print!("{}", Builtins::default().listing());
            println!("experiments:");
            for name in ExperimentRegistry::default().names() {
                println!("  {name}");
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => match run(config, seed, workers, out) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
