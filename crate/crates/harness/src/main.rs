use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vtmig_harness::{run_experiment, run_pipeline, Experiment, HarnessError, ScenarioConfig};

#[derive(Parser)]
#[command(name = "simulate", version, about = "Reputation-aware VT migration simulator")]
struct Cli {
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or `all`) and write its CSV output.
    Run {
        /// Experiment name, see `simulate list`.
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the end-to-end pipeline once and print a JSON report.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the available experiments.
    List,
}

fn load(config: Option<PathBuf>, seed: Option<u64>) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match config {
        Some(path) => ScenarioConfig::load(&path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::List => {
            for e in Experiment::ALL {
                println!("{:<24} {}", e.name(), e.description());
            }
        }
        Command::Run {
            experiment,
            config,
            seed,
            out,
        } => {
            let mut cfg = load(config, seed)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let selected: Vec<Experiment> = if experiment == "all" {
                Experiment::ALL.to_vec()
            } else {
                vec![experiment.parse()?]
            };
            for e in selected {
                log::info!("running {e}");
                for path in run_experiment(e, &cfg)?.write_to(&cfg.output_dir)? {
                    println!("{}", path.display());
                }
            }
        }
        Command::Pipeline { config, seed } => {
            let cfg = load(config, seed)?;
            let report = run_pipeline(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
