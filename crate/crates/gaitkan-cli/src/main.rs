use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gaitkan::models::Family;
use gaitkan_cli::commands::{self, CliError};
use gaitkan_cli::config::ExperimentConfig;

/// Turn-intent classification experiments: synthetic gait data, the four
/// classifier families, Bayesian hyperparameter search and the paired
/// hypothesis protocols.
#[derive(Parser)]
#[command(name = "gaitkan", version, about)]
struct Cli {
    /// TOML experiment config; command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Window size in samples (10, 20 or 30).
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Full-batch training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled multi-subject IMU gait dataset (CSV).
    Generate {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Generator profiles (TOML); defaults to the five built-ins.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Number of built-in subjects to generate (1-5).
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        trials_per_cell: Option<u32>,
        #[arg(long)]
        straight_trials: Option<u32>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Train one model and evaluate it on the subject's test split.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Subject whose test folds are evaluated.
        #[arg(long)]
        subject: String,
        /// Model family: mlp, kan, cnn or fkan.
        #[arg(long)]
        family: String,
        /// Train on the pooled training splits of all subjects.
        #[arg(long)]
        pooled: bool,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Evaluate a serialized model on a subject's test split.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Bayesian architecture/hyperparameter search on validation macro-F1.
    Hyperopt {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        family: String,
        #[arg(long)]
        budget: Option<usize>,
        /// Continue from an existing history.jsonl in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Hypothesis 1: learnable vs static activations, subject-specific.
    CompareHp1 {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated families (default mlp,kan,cnn,fkan).
        #[arg(long)]
        families: Option<String>,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Hypothesis 2: subject-specific vs pooled training per family.
    CompareHp2 {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        families: Option<String>,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Per-window inference latency of the timing-table shapes.
    Bench {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        outdir: PathBuf,
    },
}

fn parse_family(name: &str) -> Result<Family, CliError> {
    Family::parse(name).ok_or_else(|| {
        CliError::Config(format!(
            "invalid config field `family`: `{name}` (expected mlp, kan, cnn or fkan)"
        ))
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(window) = cli.window {
        cfg.window = window;
    }
    if let Some(epochs) = cli.epochs {
        cfg.epochs = epochs;
    }
    if !gaitkan::data::WINDOW_SIZES.contains(&cfg.window) {
        return Err(CliError::Config(format!(
            "invalid config field `window`: {} not in {:?}",
            cfg.window,
            gaitkan::data::WINDOW_SIZES
        )));
    }

    match cli.command {
        Command::Generate {
            out,
            profiles,
            subjects,
            trials_per_cell,
            straight_trials,
            separation,
            noise_sigma,
        } => {
            if let Some(v) = subjects {
                cfg.subjects = v;
            }
            if let Some(v) = trials_per_cell {
                cfg.trials_per_cell = v;
            }
            if let Some(v) = straight_trials {
                cfg.straight_trials = v;
            }
            if let Some(v) = separation {
                cfg.separation = v;
            }
            if let Some(v) = noise_sigma {
                cfg.noise_sigma = v;
            }
            commands::cmd_generate(&cfg, &out, profiles.as_deref())
        }
        Command::Train {
            dataset,
            subject,
            family,
            pooled,
            outdir,
        } => {
            let family = parse_family(&family)?;
            commands::cmd_train(&cfg, &dataset, &subject, family, pooled, &outdir)
        }
        Command::Evaluate {
            dataset,
            model,
            subject,
            outdir,
        } => commands::cmd_evaluate(&cfg, &dataset, &model, &subject, &outdir),
        Command::Hyperopt {
            dataset,
            subject,
            family,
            budget,
            resume,
            outdir,
        } => {
            if let Some(b) = budget {
                cfg.budget = b;
            }
            let family = parse_family(&family)?;
            commands::cmd_hyperopt(&cfg, &dataset, &subject, family, &outdir, resume)
        }
        Command::CompareHp1 {
            dataset,
            families,
            outdir,
        } => {
            if let Some(f) = families {
                cfg.families = f.split(',').map(|s| s.trim().to_string()).collect();
            }
            commands::cmd_compare_hp1(&cfg, &dataset, &outdir)
        }
        Command::CompareHp2 {
            dataset,
            families,
            outdir,
        } => {
            if let Some(f) = families {
                cfg.families = f.split(',').map(|s| s.trim().to_string()).collect();
            }
            commands::cmd_compare_hp2(&cfg, &dataset, &outdir)
        }
        Command::Bench {
            dataset,
            repetitions,
            outdir,
        } => {
            if let Some(r) = repetitions {
                cfg.repetitions = r;
            }
            commands::cmd_bench(&cfg, dataset.as_deref(), &outdir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
