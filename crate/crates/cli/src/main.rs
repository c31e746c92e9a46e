use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedpers::data::write_csv;
use fedpers::experiment::{load_node_tables, run_experiment, ExperimentConfig, Seeds, Stage};
use fedpers::{Error, Execution};

#[derive(Parser)]
#[command(
    name = "fedpers",
    version,
    about = "Federated forecasting with per-node personalization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write reports, manifest and snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `[output].dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single stage (lc, fl, kd, al, lm).
        #[arg(long)]
        only: Option<String>,
        /// Sets the data, init and train seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        sequential: bool,
    },
    /// Export the configured synthetic dataset as one CSV per node.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = Seeds::all(s);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            only,
            seed,
            jobs,
            sequential,
        } => {
            let mut cfg = load(&config, seed)?;
            if let Some(stage) = only {
                cfg.stages = vec![Stage::parse(&stage)?];
            }
            if let Some(j) = jobs {
                cfg.jobs = Some(j);
            }
            if sequential {
                cfg.execution = Execution::Sequential;
            }
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let outcome = run_experiment(&cfg, &dir)?;
            print!("{}", outcome.report.to_csv()?);
            eprintln!(
                "wrote {} artifacts to {}",
                outcome.manifest.artifacts.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Synth { config, out, seed } => {
            let cfg = load(&config, seed)?;
            if cfg.dataset.csv_dir.is_some() {
                return Err(Error::Config(
                    "synth needs a synthetic dataset config".into(),
                ));
            }
            let (schema, tables) = load_node_tables(&cfg)?;
            std::fs::create_dir_all(&out)?;
            for (i, t) in tables.iter().enumerate() {
                write_csv(t, &out.join(format!("{}_node{i}.csv", schema.name)))?;
            }
            eprintln!("wrote {} node files to {}", tables.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Stage { .. } => EXIT_STAGE,
                _ => EXIT_CONFIG,
            };
            ExitCode::from(code)
        }
    }
}
