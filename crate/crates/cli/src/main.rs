mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use trajgp::data::FeatureGroup;
use trajgp::extractors::Arch;
use trajgp::model::Head;

use crate::commands::Run;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "trajgp", version, about = "Deep kernel learning for patient trajectories")]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with planted archetypes.
    Generate {
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Clean raw encounters and write the split, normalized dataset.
    Preprocess {
        /// Raw encounters as JSON lines or CSV.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a model on a preprocessed dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Reuse the model in the output directory if the configuration is unchanged.
        #[arg(long)]
        resume: bool,
        #[arg(long, value_parser = parse_lower::<Arch>)]
        arch: Option<Arch>,
        #[arg(long, value_parser = parse_lower::<Head>)]
        head: Option<Head>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a trained model on the test split against the constant baseline.
    Evaluate {
        #[arg(long, required_unless_present = "protocol")]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present = "protocol")]
        model: Option<PathBuf>,
        /// Retrain and score once per configured seed from raw encounters.
        #[arg(long, requires = "input")]
        protocol: bool,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Cluster patients by their predicted trajectories.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Ground-truth labels to report agreement against.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Retrain with each feature group zeroed and compare test error.
    Ablate {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated feature groups; defaults to the configured list.
        #[arg(long)]
        groups: Option<String>,
    },
    /// Measure test error after permuting each feature group.
    Importance {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        groups: Option<String>,
    },
}

fn parse_lower<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase())).map_err(|e| e.to_string())
}

fn groups_or(list: Option<&str>, fallback: &[FeatureGroup]) -> Result<Vec<FeatureGroup>, CliError> {
    match list {
        Some(list) => commands::parse_groups(list),
        None => Ok(fallback.to_vec()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let mut config = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match &cli.command {
        Command::Generate { n_patients: Some(n) } => config.data.n_patients = *n,
        Command::Train { arch, head, epochs, .. } => {
            if let Some(arch) = arch {
                config.model.arch = *arch;
            }
            if let Some(head) = head {
                config.model.head = *head;
            }
            if let Some(epochs) = epochs {
                config.gp.epochs = *epochs;
            }
        }
        _ => {}
    }
    config.validate()?;
    let out = cli.out;
    match cli.command {
        Command::Generate { .. } => commands::generate(Run::new("generate", config, out)?),
        Command::Preprocess { input } => commands::preprocess(Run::new("preprocess", config, out)?, &input),
        Command::Train { data, resume, .. } => commands::train(Run::new("train", config, out)?, &data, resume),
        Command::Evaluate {
            protocol: true, input, ..
        } => {
            let input = input.expect("clap enforces --input with --protocol");
            commands::protocol(Run::new("protocol", config, out)?, &input)
        }
        Command::Evaluate { data, model, .. } => {
            let (data, model) = data.zip(model).expect("clap enforces --data and --model");
            commands::evaluate(Run::new("evaluate", config, out)?, &data, &model)
        }
        Command::Cluster { data, model, labels } => {
            commands::cluster(Run::new("cluster", config, out)?, &data, &model, labels.as_deref())
        }
        Command::Ablate { input, groups } => {
            let groups = groups_or(groups.as_deref(), &config.ablation.groups)?;
            commands::ablate(Run::new("ablate", config, out)?, &input, &groups)
        }
        Command::Importance { data, model, groups } => {
            let groups = groups_or(groups.as_deref(), &config.importance.groups)?;
            commands::importance(Run::new("importance", config, out)?, &data, &model, &groups)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRAJGP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
