//! `lrqa`: low-resource extractive QA toolkit. One config file drives
//! pretraining, fine-tuning, prediction, evaluation, corpus alignment,
//! descriptive stats, population-based tuning, and cost reporting.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config/usage error.

mod commands;
mod config;
mod runner;
mod track;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunConfig, CONFIG_ENV_VAR};

#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(e: anyhow::Error) -> Self {
        CliError::Usage(e)
    }

    pub fn runtime(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(
    name = "lrqa",
    version,
    about = "Low-resource extractive question answering toolkit"
)]
struct Cli {
    /// Run configuration (JSON); falls back to $LRQA_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory overriding the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for population training.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Masked-language pretraining on a line-per-sentence corpus.
    Pretrain,
    /// Fine-tune the span heads on a training dataset.
    Finetune {
        /// Second training dataset concatenated before splitting.
        #[arg(long)]
        augment: Option<PathBuf>,
        /// Start from an existing checkpoint instead of fresh weights.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Reuse a saved tokenizer instead of training one from the data.
        #[arg(long)]
        tokenizer: Option<PathBuf>,
    },
    /// Predict answers for a dataset with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a predictions file against gold answers.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Build a dataset from translated triples via answer-span retrieval.
    Align {
        /// Drop threshold override for the span score.
        #[arg(long)]
        threshold: Option<f64>,
        /// Line-in/line-out shell command producing translations.
        #[arg(long)]
        translator_cmd: Option<String>,
    },
    /// Corpus descriptives (titles, paragraphs, questions, answers, means).
    Stats {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Population-based hyperparameter search.
    Tune {
        /// Use the analytic surrogate objective instead of real training.
        #[arg(long)]
        surrogate: bool,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
    },
    /// Energy/CO2 arithmetic for a run of known duration.
    CostReport {
        #[arg(long)]
        duration_s: f64,
        #[arg(long)]
        energy_kwh: Option<f64>,
        #[arg(long)]
        avg_watts: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from));
    let mut config = match path {
        Some(p) => RunConfig::load(&p).map_err(CliError::usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    let warnings = config.validate().map_err(CliError::usage)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    match &cli.command {
        Cmd::Pretrain => commands::cmd_pretrain(&config),
        Cmd::Finetune {
            augment,
            init,
            tokenizer,
        } => commands::cmd_finetune(
            &config,
            &commands::FinetuneArgs {
                augment: augment.clone(),
                init: init.clone(),
                tokenizer: tokenizer.clone(),
            },
        ),
        Cmd::Predict {
            checkpoint,
            tokenizer,
            data,
        } => commands::cmd_predict(&config, checkpoint, tokenizer, data),
        Cmd::Evaluate { predictions, data } => commands::cmd_evaluate(&config, predictions, data),
        Cmd::Align {
            threshold,
            translator_cmd,
        } => commands::cmd_align(&config, *threshold, translator_cmd.as_deref()),
        Cmd::Stats { data } => commands::cmd_stats(&config, data.as_deref()),
        Cmd::Tune {
            surrogate,
            population,
            generations,
        } => commands::cmd_tune(
            &config,
            &commands::TuneArgs {
                surrogate: *surrogate,
                population: *population,
                generations: *generations,
                jobs: cli.jobs,
            },
        ),
        Cmd::CostReport {
            duration_s,
            energy_kwh,
            avg_watts,
        } => commands::cmd_cost_report(&config, *duration_s, *energy_kwh, *avg_watts),
    }
}

fn main() -> ExitCode {
    // die quietly when a downstream pipe closes instead of panicking on
    // EPIPE
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
