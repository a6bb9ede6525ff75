//! Command-level behavior through the real binary: exit codes, flag
//! overrides, file outputs feeding each other, and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lrqa"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Minimal toy config pointing at the bundled fixtures.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let fx = fixtures();
    let out = dir.join("out");
    let text = format!(
        r#"{{
  "seed": 7,
  "out_dir": {out:?},
  "model": {{"vocab_size": 360, "embedding_size": 8, "hidden_size": 32, "layers": 2,
            "heads": 4, "intermediate_size": 64, "max_positions": 64,
            "share_layers": true, "dropout": 0.0}},
  "train": {{"learning_rate": 0.005, "batch_size": 4, "epochs": 6,
            "warmup_fraction": 0.1, "weight_decay": 0.01, "seed": 7,
            "max_answer_len": 30, "stop_at_f1": null,
            "mlm": {{"mask_prob": 0.15, "batch_size": 10, "learning_rate": 0.003, "epochs": 6}}}},
  "data": {{"train": {train:?}, "source": {source:?},
           "translations": {translations:?}, "corpus": {corpus:?}}},
  "featurize": {{"max_len": 48, "stride": 16}},
  "tokenizer": {{"vocab_size": 360, "casing": "Lower"}}
  {extra}
}}"#,
        out = out.to_str().unwrap(),
        train = fx.join("toy_train.json").to_str().unwrap(),
        source = fx.join("source_en.json").to_str().unwrap(),
        translations = fx.join("translations.jsonl").to_str().unwrap(),
        corpus = fx.join("corpus_fr.txt").to_str().unwrap(),
    );
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_config_field_exits_two_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    // default config has no corpus path
    let out = bin()
        .args(["--out", tmp.path().join("o").to_str().unwrap(), "pretrain"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("data.corpus"),
        "stderr must name the missing field: {}",
        stderr(&out)
    );
}

#[test]
fn nonexistent_path_in_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"data": {"train": "/definitely/not/here.json"}}"#).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "stats"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data.train"));
}

#[test]
fn unknown_flag_exits_two() {
    let out = run(&["stats", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_env_var_is_a_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = bin()
        .env("LRQA_CONFIG", cfg.to_str().unwrap())
        .args(["stats"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("# questions"));
}

#[test]
fn stats_fixture_counts_match_construction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = run(&["--config", cfg.to_str().unwrap(), "stats"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("# titles"), "{text}");
    // toy_train.json: 1 article, 16 paragraphs, 16 questions, 16 answers
    let csv = std::fs::read_to_string(tmp.path().join("out/stats.csv")).unwrap();
    let counts: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&counts[..4], &["1", "16", "16", "16"]);
}

#[test]
fn align_threshold_monotonicity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let drops = |threshold: &str| -> u64 {
        let out = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "align",
            "--threshold",
            threshold,
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("out/align_report.json")).unwrap(),
        )
        .unwrap();
        report["dropped"].as_u64().unwrap()
    };
    let at_half = drops("0.5");
    let at_ninety = drops("0.9");
    assert_eq!(at_half, 2);
    assert!(
        at_ninety >= at_half,
        "raising the threshold can only drop more: {at_ninety} vs {at_half}"
    );
}

#[test]
fn align_missing_translations_lists_ids() {
    let tmp = tempfile::tempdir().unwrap();
    // translations file with only one record
    let partial = tmp.path().join("partial.jsonl");
    std::fs::write(
        &partial,
        r#"{"id":"s0","context_fr":"la tour est a paris","question_fr":"ou ?","answer_fr":"paris"}"#,
    )
    .unwrap();
    let cfg = write_config(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let fixed = text.replace(
        fixtures().join("translations.jsonl").to_str().unwrap(),
        partial.to_str().unwrap(),
    );
    std::fs::write(&cfg, fixed).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "align"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for id in ["s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9"] {
        assert!(err.contains(id), "missing id {id} not listed: {err}");
    }
}

#[test]
fn align_with_identity_translator_command() {
    // `cat` as the line-in/line-out translator: answers stay verbatim, so
    // everything aligns exactly
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let fixed = text.replace(
        &format!(
            "\"translations\": {:?}",
            fixtures().join("translations.jsonl").to_str().unwrap()
        ),
        &format!(
            "\"translations\": {:?}",
            tmp.path().join("generated.jsonl").to_str().unwrap()
        ),
    );
    std::fs::write(&cfg, fixed).unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "align",
        "--translator-cmd",
        "cat",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(tmp.path().join("generated.jsonl").exists());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("out/align_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["exact"].as_u64().unwrap(), 10);
    assert_eq!(report["dropped"].as_u64().unwrap(), 0);
    assert_eq!(report["chrf_calls"].as_u64().unwrap(), 0);
}

#[test]
fn evaluate_gold_as_prediction_scores_hundred() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    // build a predictions file straight from the gold answers
    let ds: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("toy_train.json")).unwrap(),
    )
    .unwrap();
    let mut preds = serde_json::Map::new();
    for article in ds["data"].as_array().unwrap() {
        for p in article["paragraphs"].as_array().unwrap() {
            for qa in p["qas"].as_array().unwrap() {
                preds.insert(
                    qa["id"].as_str().unwrap().to_string(),
                    qa["answers"][0]["text"].clone(),
                );
            }
        }
    }
    let pred_path = tmp.path().join("preds.json");
    std::fs::write(&pred_path, serde_json::to_string(&preds).unwrap()).unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "evaluate",
        "--predictions",
        pred_path.to_str().unwrap(),
        "--data",
        fixtures().join("toy_train.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("F1 / EM: 100.0 / 100.0"), "{}", stdout(&out));
}

#[test]
fn evaluate_empty_predictions_warns_and_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let pred_path = tmp.path().join("empty.json");
    std::fs::write(&pred_path, "{}").unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "evaluate",
        "--predictions",
        pred_path.to_str().unwrap(),
        "--data",
        fixtures().join("toy_train.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("F1 / EM: 0.0 / 0.0"));
    assert_eq!(stderr(&out).matches("warning: no prediction").count(), 16);
}

#[test]
fn zero_epoch_finetune_preserves_init_and_still_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&cfg, text.replace("\"epochs\": 6", "\"epochs\": 0")).unwrap();

    // first run produces the init checkpoint
    let out = run(&["--config", cfg.to_str().unwrap(), "finetune"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let first = std::fs::read(tmp.path().join("out/checkpoint.lrqa")).unwrap();
    assert!(tmp.path().join("out/eval_val.json").exists());
    assert!(stdout(&out).contains("F1 / EM:"));

    // feeding it back through a zero-epoch run must not change the bytes
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "finetune",
        "--init",
        tmp.path().join("out/checkpoint.lrqa").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let second = std::fs::read(tmp.path().join("out/checkpoint.lrqa")).unwrap();
    assert_eq!(first, second, "zero-epoch run altered the checkpoint");
}

#[test]
fn finetune_augment_concatenates_before_split() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "finetune",
        "--augment",
        fixtures().join("toy_train.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("augmented training data: 32 questions"));
    // 32 questions split 29/3 at 10%
    assert!(
        stdout(&out).contains("train 29 questions, validation 3 questions"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn pretrain_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = run(&["--config", cfg.to_str().unwrap(), "pretrain"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let ckpt = tmp.path().join("out/pretrain_checkpoint.lrqa");
    let curve = tmp.path().join("out/pretrain_curve.csv");
    let first = (std::fs::read(&ckpt).unwrap(), std::fs::read(&curve).unwrap());
    let out = run(&["--config", cfg.to_str().unwrap(), "pretrain"]);
    assert_eq!(out.status.code(), Some(0));
    let second = (std::fs::read(&ckpt).unwrap(), std::fs::read(&curve).unwrap());
    assert_eq!(first, second, "same seed must reproduce identical bytes");
}

#[test]
fn tune_surrogate_history_row_count_and_population_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#", "hpo": {"space": [
            {"name": "learning_rate", "kind": "log_uniform", "bounds": [1e-5, 1e-4]}
        ], "population_size": 6, "generations": 4, "steps_per_generation": 1,
        "quantile": 0.25, "perturb_factors": [0.8, 1.25], "resample_prob": 0.25}"#,
    );
    let out = run(&["--config", cfg.to_str().unwrap(), "tune", "--surrogate"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(tmp.path().join("out/history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 * 4, "header plus population x generations");

    // a population of one runs as plain training
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "tune",
        "--surrogate",
        "--population",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(tmp.path().join("out/history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn tune_parallel_jobs_match_serial_history() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#", "hpo": {"space": [
            {"name": "learning_rate", "kind": "log_uniform", "bounds": [1e-4, 3e-2]},
            {"name": "batch_size", "kind": "categorical", "choices": [4, 8]}
        ], "population_size": 3, "generations": 2, "steps_per_generation": 4,
        "quantile": 0.25, "perturb_factors": [0.8, 1.25], "resample_prob": 0.25}"#,
    );
    let out = run(&["--config", cfg.to_str().unwrap(), "tune"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let serial = std::fs::read_to_string(tmp.path().join("out/history.csv")).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "--jobs", "3", "tune"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let parallel = std::fs::read_to_string(tmp.path().join("out/history.csv")).unwrap();
    assert_eq!(serial, parallel, "parallel and serial histories must match");
}

#[test]
fn cost_report_reproduces_reference_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "cost-report",
        "--duration-s",
        "7207",
        "--energy-kwh",
        "1.08",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("317.87"), "{}", stdout(&out));
}

#[test]
fn evaluate_mixed_fixture_prints_derived_means() {
    // two examples: one exact (EM 1, F1 1), one partial (EM 0, F1 2/3)
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let data = tmp.path().join("two.json");
    std::fs::write(
        &data,
        r#"{"version":"1.1","data":[{"title":"T","paragraphs":[
            {"context":"La tour Eiffel est à Paris.","qas":[
                {"id":"e1","question":"Quoi ?","answers":[{"text":"tour Eiffel","answer_start":3}]}]},
            {"context":"Le chat dort sur le tapis.","qas":[
                {"id":"e2","question":"Qui ?","answers":[{"text":"chat","answer_start":3}]}]}
        ]}]}"#,
    )
    .unwrap();
    let preds = tmp.path().join("preds.json");
    std::fs::write(&preds, r#"{"e1":"la tour EIFFEL","e2":"chat dort"}"#).unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "evaluate",
        "--predictions",
        preds.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(
        stdout(&out).contains("F1 / EM: 83.3 / 50.0"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn sampler_command_powers_tracked_runs() {
    // external sampler: a shell command printing instantaneous watts
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#", "cost": {"power": {"avg_watts": 100.0, "sampler_cmd": "echo 150.0",
                              "sampler_cadence_s": 0.01},
                    "carbon": {"intensity_g_per_kwh": 294.32}}"#,
    );
    let out = run(&["--config", cfg.to_str().unwrap(), "pretrain"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("sampled power"), "{}", stdout(&out));
    let cost: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("out/cost_pretrain.json")).unwrap(),
    )
    .unwrap();
    let report = &cost["report"];
    let duration = report["duration_s"].as_f64().unwrap();
    let energy = report["energy_kwh"].as_f64().unwrap();
    // constant 150 W sampler: energy must equal 150 * t / 3.6e6 closely
    let expected = 150.0 * duration / 3.6e6;
    assert!(
        (energy - expected).abs() / expected < 0.05,
        "energy {energy} vs expected {expected}"
    );
    assert_eq!(
        report["co2_g"].as_f64().unwrap(),
        energy * 294.32,
        "emissions invariant"
    );
}
