use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shm_kdme::commands;
use shm_kdme::{CliError, Overrides, RunConfig};

/// Unsupervised structural damage detection from cumulative-intensity
/// features and KDME densities.
#[derive(Debug, Parser)]
#[command(name = "shm-kdme", version)]
struct Cli {
    /// TOML run configuration; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for both data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct DatasetFlags {
    /// Hours of training data.
    #[arg(long)]
    train_hours: Option<f64>,
    /// Number of test simulations.
    #[arg(long)]
    test_cases: Option<usize>,
    /// Make every test case intact with a sub-threshold event.
    #[arg(long)]
    null: bool,
}

#[derive(Debug, Args, Default)]
struct DetectorFlags {
    /// Retained principal / independent components.
    #[arg(long)]
    q: Option<usize>,
    /// Block size of the block-minima threshold.
    #[arg(long)]
    block_window: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dataset: DatasetFlags,
    },
    /// Train a novelty model on the training records of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        detector: DetectorFlags,
    },
    /// Score test records against a trained model.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG scatter of median densities.
        #[arg(long)]
        svg: bool,
    },
    /// Fit a KDME density to one CSV column.
    FitDensity {
        #[arg(long)]
        input: PathBuf,
        /// Header name of the column; the first column by default.
        #[arg(long)]
        column: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Write the Bayesian-optimization history.
        #[arg(long)]
        trace: bool,
    },
    /// Simulate, train and detect in memory and report metrics.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dataset: DatasetFlags,
        #[command(flatten)]
        detector: DetectorFlags,
    },
}

fn overrides(seed: Option<u64>, dataset: Option<&DatasetFlags>, detector: Option<&DetectorFlags>) -> Overrides {
    Overrides {
        seed,
        q: detector.and_then(|d| d.q),
        block_window: detector.and_then(|d| d.block_window),
        train_hours: dataset.and_then(|d| d.train_hours),
        test_cases: dataset.and_then(|d| d.test_cases),
        null_experiment: dataset.is_some_and(|d| d.null),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate { out, dataset } => {
            config.apply(&overrides(cli.seed, Some(dataset), None));
            let s = commands::simulate(&config, out)?;
            println!(
                "wrote {} training blocks and {} test cases ({} damaged) to {}",
                s.training_blocks,
                s.test_cases,
                s.damaged_cases,
                out.display()
            );
        }
        Command::Train { data, out, detector } => {
            config.apply(&overrides(cli.seed, None, Some(detector)));
            let model = commands::train(&config, data, out)?;
            println!(
                "trained on {} segments; threshold {:e}; model in {}",
                model.metadata.training_segments,
                model.threshold,
                out.join(commands::MODEL_FILE).display()
            );
        }
        Command::Detect { model, data, out, svg } => {
            let report = commands::detect(model, data, out, *svg)?;
            let damaged = report.simulations.iter().filter(|s| s.damaged).count();
            println!("{damaged} of {} simulations flagged damaged", report.simulations.len());
            if let Some(m) = report.metrics {
                println!("accuracy {:.3}, recall {:?}", m.accuracy, m.recall);
            }
        }
        Command::FitDensity { input, column, out, trace } => {
            config.apply(&overrides(cli.seed, None, None));
            let m = commands::fit_density(&config, input, column.as_deref(), out, *trace)?;
            println!("fitted M = {} with theta {:.6}", m.moments(), m.theta);
        }
        Command::Evaluate { out, dataset, detector } => {
            config.apply(&overrides(cli.seed, Some(dataset), Some(detector)));
            let e = commands::evaluate(&config, Some(out))?;
            match (e.report.confusion, e.report.metrics) {
                (Some(c), Some(m)) => println!(
                    "tn {} tp {} fn {} fp {}; accuracy {:.3}, recall {}, precision {}",
                    c.tn,
                    c.tp,
                    c.fn_,
                    c.fp,
                    m.accuracy,
                    m.recall.map_or("-".into(), |v| format!("{v:.3}")),
                    m.precision.map_or("-".into(), |v| format!("{v:.3}"))
                ),
                _ => println!("no labelled simulations"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
