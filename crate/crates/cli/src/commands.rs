//! Subcommand implementations. Every command reads the merged run config,
//! works under the output directory, and leaves artifacts that downstream
//! commands accept unchanged.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use lrqa_core::align::{align_corpus, parse_translations, Translation};
use lrqa_core::data::{
    concat_datasets, corpus_stats, emit_squad, featurize, parse_squad, split_validation, Dataset,
    Feature,
};
use lrqa_core::hpo::{pbt_search, surrogate_factory, QaTrainable, SearchSpace};
use lrqa_core::metrics::evaluate;
use lrqa_core::model::{checkpoint_size_mb, Dtype, EncoderConfig, Model};
use lrqa_core::tokenizer::{train_tokenizer, Tokenizer};
use lrqa_core::trainer::{
    contexts_by_id, finetune_qa, predict_spans, pretrain_mlm, TrainRecord,
};

use crate::config::RunConfig;
use crate::runner::ThreadRunner;
use crate::track::{power_model_label, track, CostFile, PowerSource};
use crate::CliError;

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn ensure_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating output directory {}", config.out_dir.display()))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    parse_squad(&bytes).map_err(|e| anyhow!("dataset {}: {e}", path.display()))
}

/// The config field must be set and its file must exist; both failures are
/// usage errors naming the field.
fn require_path<'a>(field: &str, path: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    match path {
        Some(p) if p.exists() => Ok(p.as_path()),
        Some(p) => Err(CliError::usage(anyhow!(
            "config field {field}: path {} does not exist",
            p.display()
        ))),
        None => Err(CliError::usage(anyhow!(
            "config field {field} is required for this command"
        ))),
    }
}

/// Every text surface of a dataset, for tokenizer training.
fn dataset_corpus_text(ds: &Dataset) -> String {
    let mut out = String::new();
    for (context, qa) in ds.examples() {
        out.push_str(context);
        out.push('\n');
        out.push_str(&qa.question);
        out.push('\n');
        for ans in &qa.answers {
            out.push_str(&ans.text);
            out.push('\n');
        }
    }
    out
}

fn build_tokenizer(config: &RunConfig, corpus: &str) -> Result<Tokenizer> {
    let tokenizer = train_tokenizer(corpus, config.tokenizer_vocab_size(), config.tokenizer.casing)
        .map_err(|e| anyhow!("tokenizer: {e}"))?;
    if tokenizer.vocab_size() > config.model.vocab_size {
        bail!(
            "tokenizer vocabulary ({}) exceeds model vocab_size ({}); raise model.vocab_size",
            tokenizer.vocab_size(),
            config.model.vocab_size
        );
    }
    Ok(tokenizer)
}

fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading tokenizer {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing tokenizer {}", path.display()))
}

fn featurize_dataset(
    ds: &Dataset,
    tokenizer: &Tokenizer,
    config: &RunConfig,
) -> Result<Vec<Feature>> {
    let mut features = Vec::new();
    let max_len = config.featurize.max_len.min(config.model.max_positions);
    for (context, qa) in ds.examples() {
        features.extend(
            featurize(qa, context, tokenizer, max_len, config.featurize.stride)
                .map_err(|e| anyhow!("featurizing {}: {e}", qa.id))?,
        );
    }
    Ok(features)
}

fn save_checkpoint(model: &Model, dir: &Path, name: &str) -> Result<(PathBuf, f64)> {
    let bytes = model.to_bytes(Dtype::F64);
    let mb = checkpoint_size_mb(bytes.len());
    let path = write_file(dir, name, &bytes)?;
    Ok((path, mb))
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Model::from_bytes(&bytes).map_err(|e| anyhow!("checkpoint {}: {e}", path.display()))
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    first_loss: Option<f64>,
    final_loss: Option<f64>,
    epoch_evals: Vec<lrqa_core::trainer::EpochEval>,
}

impl TrainSummary {
    fn from_record(record: &TrainRecord) -> Self {
        TrainSummary {
            steps: record.step_losses.len(),
            first_loss: record.step_losses.first().copied(),
            final_loss: record.step_losses.last().copied(),
            epoch_evals: record.epoch_evals.clone(),
        }
    }
}

fn write_cost(
    dir: &Path,
    name: &str,
    report: lrqa_core::cost::CostReport,
    epoch_wall_clock_s: Vec<f64>,
) -> Result<()> {
    println!("{}", lrqa_core::cost::CostReport::table_header());
    println!("{}", report.table_row());
    println!("power model: {}", power_model_label(&report.power_model));
    write_json(
        dir,
        name,
        &CostFile {
            report,
            epoch_wall_clock_s,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

pub fn cmd_pretrain(config: &RunConfig) -> Result<(), CliError> {
    let corpus_path = require_path("data.corpus", &config.data.corpus)?;
    ensure_out(config).map_err(CliError::usage)?;
    let text = std::fs::read_to_string(corpus_path)
        .with_context(|| format!("reading corpus {}", corpus_path.display()))
        .map_err(CliError::usage)?;
    let lines: Vec<String> = text.lines().map(str::to_string).collect();

    let tokenizer = build_tokenizer(config, &text).map_err(CliError::usage)?;
    let mut model = Model::build(config.model.clone(), config.seed)
        .map_err(|e| CliError::usage(anyhow!("model: {e}")))?;
    let train_config = config.train_config();

    let t0 = Instant::now();
    let clock = move || t0.elapsed().as_secs_f64();
    let source = PowerSource::from_config(&config.cost);
    let (result, report) = track(&source, config.cost.carbon.intensity_g_per_kwh, || {
        pretrain_mlm(&mut model, &lines, &tokenizer, &train_config, Some(&clock))
    });
    let record = result.map_err(|e| CliError::runtime(anyhow!("pretraining: {e}")))?;

    let dir = config.out_dir.as_path();
    write_json(dir, "tokenizer.json", &tokenizer).map_err(CliError::runtime)?;
    let (ckpt, mb) = save_checkpoint(&model, dir, "pretrain_checkpoint.lrqa")
        .map_err(CliError::runtime)?;
    write_file(dir, "pretrain_curve.csv", record.curve_csv().as_bytes())
        .map_err(CliError::runtime)?;
    write_json(dir, "pretrain_summary.json", &TrainSummary::from_record(&record))
        .map_err(CliError::runtime)?;
    println!(
        "pretrained {} steps; final loss {:.4}; checkpoint {} ({:.2} MB)",
        record.step_losses.len(),
        record.step_losses.last().copied().unwrap_or(0.0),
        ckpt.display(),
        mb
    );
    write_cost(dir, "cost_pretrain.json", report, record.epoch_wall_clock_s.clone())
        .map_err(CliError::runtime)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

pub struct FinetuneArgs {
    pub augment: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
}

pub fn cmd_finetune(config: &RunConfig, args: &FinetuneArgs) -> Result<(), CliError> {
    let train_path = require_path("data.train", &config.data.train)?;
    ensure_out(config).map_err(CliError::usage)?;
    let mut dataset = load_dataset(train_path).map_err(CliError::runtime)?;
    if let Some(augment) = &args.augment {
        let extra = load_dataset(augment).map_err(CliError::runtime)?;
        dataset = concat_datasets(&dataset, &extra);
        println!(
            "augmented training data: {} questions after concatenation",
            dataset.question_count()
        );
    }

    let (train_ds, val_ds) = match &config.data.dev {
        Some(dev) => (dataset, load_dataset(dev).map_err(CliError::runtime)?),
        None => split_validation(&dataset, 0.10, config.seed)
            .map_err(|e| CliError::runtime(anyhow!("validation split: {e}")))?,
    };

    let tokenizer = match &args.tokenizer {
        Some(path) => load_tokenizer(path).map_err(CliError::usage)?,
        None => build_tokenizer(config, &dataset_corpus_text(&train_ds)).map_err(CliError::usage)?,
    };
    let mut model = match &args.init {
        Some(path) => load_checkpoint(path).map_err(CliError::runtime)?,
        None => Model::build(config.model.clone(), config.seed)
            .map_err(|e| CliError::usage(anyhow!("model: {e}")))?,
    };

    let train_features = featurize_dataset(&train_ds, &tokenizer, config).map_err(CliError::runtime)?;
    let val_features = featurize_dataset(&val_ds, &tokenizer, config).map_err(CliError::runtime)?;
    let train_config = config.train_config();

    let t0 = Instant::now();
    let clock = move || t0.elapsed().as_secs_f64();
    let source = PowerSource::from_config(&config.cost);
    let (result, report) = track(&source, config.cost.carbon.intensity_g_per_kwh, || {
        if train_config.epochs == 0 {
            Ok(TrainRecord::default())
        } else {
            finetune_qa(
                &mut model,
                &train_features,
                Some((&val_ds, &val_features)),
                &train_config,
                Some(&clock),
            )
        }
    });
    let record = result.map_err(|e| CliError::runtime(anyhow!("fine-tuning: {e}")))?;

    // final evaluation runs even for zero epochs
    let contexts = contexts_by_id(&val_ds);
    let predictions = predict_spans(&model, &val_features, &contexts, train_config.max_answer_len)
        .map_err(|e| CliError::runtime(anyhow!("prediction: {e}")))?;
    for w in &predictions.warnings {
        eprintln!("warning: {w}");
    }
    let eval = evaluate(&predictions.answers, &val_ds);

    let dir = config.out_dir.as_path();
    write_json(dir, "tokenizer.json", &tokenizer).map_err(CliError::runtime)?;
    let (ckpt, mb) = save_checkpoint(&model, dir, "checkpoint.lrqa").map_err(CliError::runtime)?;
    write_file(dir, "train_split.json", emit_squad(&train_ds).as_bytes())
        .map_err(CliError::runtime)?;
    write_file(dir, "val_split.json", emit_squad(&val_ds).as_bytes())
        .map_err(CliError::runtime)?;
    write_file(dir, "train_curve.csv", record.curve_csv().as_bytes())
        .map_err(CliError::runtime)?;
    write_json(dir, "train_summary.json", &TrainSummary::from_record(&record))
        .map_err(CliError::runtime)?;
    write_json(dir, "predictions_val.json", &predictions.answers).map_err(CliError::runtime)?;
    write_json(dir, "eval_val.json", &eval).map_err(CliError::runtime)?;

    println!(
        "train {} questions, validation {} questions",
        train_ds.question_count(),
        val_ds.question_count()
    );
    println!("F1 / EM: {}", eval.summary_row());
    println!("checkpoint {} ({:.2} MB)", ckpt.display(), mb);
    write_cost(dir, "cost_finetune.json", report, record.epoch_wall_clock_s.clone())
        .map_err(CliError::runtime)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// predict / evaluate
// ---------------------------------------------------------------------------

pub fn cmd_predict(
    config: &RunConfig,
    checkpoint: &Path,
    tokenizer_path: &Path,
    data: &Path,
) -> Result<(), CliError> {
    ensure_out(config).map_err(CliError::usage)?;
    let model = load_checkpoint(checkpoint).map_err(CliError::runtime)?;
    let tokenizer = load_tokenizer(tokenizer_path).map_err(CliError::runtime)?;
    let dataset = load_dataset(data).map_err(CliError::runtime)?;
    let features = featurize_dataset(&dataset, &tokenizer, config).map_err(CliError::runtime)?;
    let contexts = contexts_by_id(&dataset);
    let predictions = predict_spans(
        &model,
        &features,
        &contexts,
        config.train.max_answer_len,
    )
    .map_err(|e| CliError::runtime(anyhow!("prediction: {e}")))?;
    for w in &predictions.warnings {
        eprintln!("warning: {w}");
    }
    let path = write_json(&config.out_dir, "predictions.json", &predictions.answers)
        .map_err(CliError::runtime)?;
    println!(
        "wrote {} predictions to {}",
        predictions.answers.len(),
        path.display()
    );
    Ok(())
}

pub fn cmd_evaluate(config: &RunConfig, predictions: &Path, data: &Path) -> Result<(), CliError> {
    ensure_out(config).map_err(CliError::usage)?;
    let text = std::fs::read_to_string(predictions)
        .with_context(|| format!("reading predictions {}", predictions.display()))
        .map_err(CliError::usage)?;
    let map: BTreeMap<String, String> = serde_json::from_str(&text)
        .with_context(|| format!("parsing predictions {}", predictions.display()))
        .map_err(CliError::runtime)?;
    let dataset = load_dataset(data).map_err(CliError::runtime)?;
    let report = evaluate(&map, &dataset);
    for id in &report.missing {
        eprintln!("warning: no prediction for {id}; scored 0");
    }
    write_json(&config.out_dir, "eval.json", &report).map_err(CliError::runtime)?;
    print!("{}", report.text());
    println!("F1 / EM: {}", report.summary_row());
    Ok(())
}

// ---------------------------------------------------------------------------
// align
// ---------------------------------------------------------------------------

/// Pipe lines through an external `sh -c` command; one output line per
/// input line.
fn translate_lines(cmd: &str, lines: &[String]) -> Result<Vec<String>> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .with_context(|| format!("spawning translator command {cmd:?}"))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let joined = lines.join("\n");
    // feed stdin from its own thread while draining stdout, or a child that
    // echoes as it reads can fill the pipe and deadlock
    let writer = std::thread::spawn(move || -> std::io::Result<()> {
        stdin.write_all(joined.as_bytes())?;
        stdin.write_all(b"\n")?;
        Ok(())
    });
    let output = child.wait_with_output()?;
    writer
        .join()
        .map_err(|_| anyhow!("writer thread panicked"))??;
    if !output.status.success() {
        bail!("translator command failed with {}", output.status);
    }
    let out: Vec<String> = String::from_utf8(output.stdout)?
        .lines()
        .map(str::to_string)
        .collect();
    if out.len() != lines.len() {
        bail!(
            "translator returned {} lines for {} inputs",
            out.len(),
            lines.len()
        );
    }
    Ok(out)
}

/// Produce a translations file by piping each example's context, question,
/// and answer through the translator command.
fn generate_translations(source: &Dataset, cmd: &str, path: &Path) -> Result<()> {
    let mut ids = Vec::new();
    let mut lines = Vec::new();
    for (context, qa) in source.examples() {
        ids.push(qa.id.clone());
        // newlines inside contexts would desynchronize the line protocol
        lines.push(context.replace('\n', " "));
        lines.push(qa.question.replace('\n', " "));
        lines.push(qa.answers[0].text.replace('\n', " "));
    }
    let translated = translate_lines(cmd, &lines)?;
    let mut out = String::new();
    for (k, id) in ids.iter().enumerate() {
        let record = Translation {
            id: id.clone(),
            context_fr: translated[3 * k].clone(),
            question_fr: translated[3 * k + 1].clone(),
            answer_fr: translated[3 * k + 2].clone(),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn cmd_align(
    config: &RunConfig,
    threshold: Option<f64>,
    translator_cmd: Option<&str>,
) -> Result<(), CliError> {
    let source_path = require_path("data.source", &config.data.source)?;
    ensure_out(config).map_err(CliError::usage)?;
    let source = load_dataset(source_path).map_err(CliError::runtime)?;

    let translator = translator_cmd.or(config.align.translator_cmd.as_deref());
    let translations_path = match &config.data.translations {
        Some(p) if p.exists() => p.clone(),
        Some(p) => match translator {
            Some(cmd) => {
                generate_translations(&source, cmd, p).map_err(CliError::runtime)?;
                p.clone()
            }
            None => {
                return Err(CliError::usage(anyhow!(
                    "config field data.translations: path {} does not exist",
                    p.display()
                )))
            }
        },
        None => match translator {
            Some(cmd) => {
                let p = config.out_dir.join("translations.jsonl");
                generate_translations(&source, cmd, &p).map_err(CliError::runtime)?;
                p
            }
            None => {
                return Err(CliError::usage(anyhow!(
                    "config field data.translations is required for this command (or set a translator command)"
                )))
            }
        },
    };

    let text = std::fs::read_to_string(&translations_path)
        .with_context(|| format!("reading translations {}", translations_path.display()))
        .map_err(CliError::runtime)?;
    let translations = parse_translations(&text)
        .map_err(|e| CliError::runtime(anyhow!("{e}")))?;

    let mut params = config.align.params.clone();
    if let Some(t) = threshold {
        params.threshold = t;
    }
    params
        .validate()
        .map_err(|e| CliError::usage(anyhow!("{e}")))?;

    let (aligned, report) = align_corpus(&source, &translations, &params)
        .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
    let dir = config.out_dir.as_path();
    write_file(dir, "aligned.json", emit_squad(&aligned).as_bytes()).map_err(CliError::runtime)?;
    write_json(dir, "align_report.json", &report).map_err(CliError::runtime)?;
    print!("{}", report.text());
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

pub fn cmd_stats(config: &RunConfig, data: Option<&Path>) -> Result<(), CliError> {
    let path = match data {
        Some(p) => p.to_path_buf(),
        None => require_path("data.train", &config.data.train)?.to_path_buf(),
    };
    ensure_out(config).map_err(CliError::usage)?;
    let dataset = load_dataset(&path).map_err(CliError::runtime)?;
    let stats = corpus_stats(&dataset);
    let dir = config.out_dir.as_path();
    write_file(dir, "stats.txt", stats.text_table().as_bytes()).map_err(CliError::runtime)?;
    write_file(dir, "stats.csv", stats.csv().as_bytes()).map_err(CliError::runtime)?;
    write_json(dir, "stats.json", &stats).map_err(CliError::runtime)?;
    print!("{}", stats.text_table());
    Ok(())
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

pub struct TuneArgs {
    pub surrogate: bool,
    pub population: Option<usize>,
    pub generations: Option<usize>,
    pub jobs: usize,
}

pub fn cmd_tune(config: &RunConfig, args: &TuneArgs) -> Result<(), CliError> {
    ensure_out(config).map_err(CliError::usage)?;
    let mut pbt = config.hpo.pbt_config(config.seed);
    if let Some(p) = args.population {
        pbt.population_size = p;
    }
    if let Some(g) = args.generations {
        pbt.generations = g;
    }
    if pbt.population_size == 0 {
        return Err(CliError::usage(anyhow!("population must be at least 1")));
    }
    let space: &SearchSpace = &config.hpo.space;
    let dir = config.out_dir.as_path();
    let source = PowerSource::from_config(&config.cost);

    if args.surrogate {
        let (result, report) = track(&source, config.cost.carbon.intensity_g_per_kwh, || {
            pbt_search(
                &mut surrogate_factory(),
                space,
                &pbt,
                &mut ThreadRunner { jobs: args.jobs },
            )
        });
        let outcome = result.map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        write_file(dir, "history.csv", outcome.history_csv(space).as_bytes())
            .map_err(CliError::runtime)?;
        write_json(dir, "history.json", &outcome.history).map_err(CliError::runtime)?;
        write_json(dir, "best_hyperparams.json", &outcome.best_hyperparams)
            .map_err(CliError::runtime)?;
        println!(
            "surrogate best score {:.4} with hyperparameters {:?}",
            outcome.best_score, outcome.best_hyperparams
        );
        write_cost(dir, "cost_tune.json", report, Vec::new()).map_err(CliError::runtime)?;
        return Ok(());
    }

    let train_path = require_path("data.train", &config.data.train)?;
    let dataset = load_dataset(train_path).map_err(CliError::runtime)?;
    let (train_ds, val_ds) = match &config.data.dev {
        Some(dev) => (dataset, load_dataset(dev).map_err(CliError::runtime)?),
        None => split_validation(&dataset, 0.10, config.seed)
            .map_err(|e| CliError::runtime(anyhow!("validation split: {e}")))?,
    };
    let tokenizer =
        build_tokenizer(config, &dataset_corpus_text(&train_ds)).map_err(CliError::usage)?;
    let train_features =
        featurize_dataset(&train_ds, &tokenizer, config).map_err(CliError::runtime)?;
    let val_features = featurize_dataset(&val_ds, &tokenizer, config).map_err(CliError::runtime)?;
    let base = config.train_config();
    let model_config: EncoderConfig = config.model.clone();

    let mut factory = |_member: usize, member_seed: u64| -> Result<QaTrainable, String> {
        let model = Model::build(model_config.clone(), member_seed).map_err(|e| e.to_string())?;
        Ok(QaTrainable::new(
            model,
            train_features.clone(),
            val_ds.clone(),
            val_features.clone(),
            base.clone(),
            member_seed,
        ))
    };

    let (result, report) = track(&source, config.cost.carbon.intensity_g_per_kwh, || {
        pbt_search(&mut factory, space, &pbt, &mut ThreadRunner { jobs: args.jobs })
    });
    let outcome = result.map_err(|e| CliError::runtime(anyhow!("{e}")))?;

    write_file(dir, "history.csv", outcome.history_csv(space).as_bytes())
        .map_err(CliError::runtime)?;
    write_json(dir, "history.json", &outcome.history).map_err(CliError::runtime)?;
    write_json(dir, "best_hyperparams.json", &outcome.best_hyperparams)
        .map_err(CliError::runtime)?;
    write_file(dir, "tune_best.lrqa", &outcome.best_state).map_err(CliError::runtime)?;
    write_json(dir, "tokenizer.json", &tokenizer).map_err(CliError::runtime)?;
    println!(
        "best validation F1 {:.2} with hyperparameters {:?}",
        outcome.best_score, outcome.best_hyperparams
    );
    write_cost(dir, "cost_tune.json", report, Vec::new()).map_err(CliError::runtime)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// cost-report
// ---------------------------------------------------------------------------

pub fn cmd_cost_report(
    config: &RunConfig,
    duration_s: f64,
    energy_kwh: Option<f64>,
    avg_watts: Option<f64>,
) -> Result<(), CliError> {
    ensure_out(config).map_err(CliError::usage)?;
    let intensity = config.cost.carbon.intensity_g_per_kwh;
    let report = match energy_kwh {
        Some(kwh) => {
            if kwh < 0.0 || duration_s < 0.0 {
                return Err(CliError::usage(anyhow!("duration and energy must be nonnegative")));
            }
            lrqa_core::cost::CostReport {
                duration_s,
                energy_kwh: kwh,
                co2_g: lrqa_core::cost::co2_from_energy(kwh, intensity)
                    .map_err(|e| CliError::usage(anyhow!("{e}")))?,
                intensity_g_per_kwh: intensity,
                power_model: lrqa_core::cost::PowerModel::AvgWatts(
                    avg_watts.unwrap_or(config.cost.power.avg_watts),
                ),
            }
        }
        None => lrqa_core::cost::CostReport::from_fixed_power(
            duration_s,
            avg_watts.unwrap_or(config.cost.power.avg_watts),
            intensity,
        )
        .map_err(|e| CliError::usage(anyhow!("{e}")))?,
    };
    println!("{}", lrqa_core::cost::CostReport::table_header());
    println!("{}", report.table_row());
    println!("power model: {}", power_model_label(&report.power_model));
    write_json(&config.out_dir, "cost_report.json", &report).map_err(CliError::runtime)?;
    Ok(())
}
