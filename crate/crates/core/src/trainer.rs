//! Training loops: span-QA fine-tuning with joint start/end cross-entropy
//! and a linear warmup/decay schedule, toy-scale MLM pretraining, and span
//! decoding from logits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{char_slice, Dataset, Feature};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Model, ModelError, ParamVars};
use crate::seeds;
use crate::tensor::{AdamState, AdamW, Graph, TensorError, Var};
use crate::tokenizer::{Tokenizer, CLS, MASK, SEP, SPECIALS};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    /// No window carries a resolvable answer span.
    AllWindowsNull,
    /// Loss left the finite range; training aborts with the offending step.
    Diverged { step: usize },
    EmptyCorpus,
    CorpusSmallerThanBatch { sequences: usize, batch: usize },
    InvalidConfig(String),
    Model(ModelError),
    Tensor(TensorError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::AllWindowsNull => {
                write!(f, "every training window has null answer positions")
            }
            TrainError::Diverged { step } => {
                write!(f, "loss became non-finite at step {step}")
            }
            TrainError::EmptyCorpus => write!(f, "pretraining corpus is empty"),
            TrainError::CorpusSmallerThanBatch { sequences, batch } => {
                write!(f, "corpus of {sequences} sequences smaller than one batch of {batch}")
            }
            TrainError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub mask_prob: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            mask_prob: 0.15,
            batch_size: 128,
            learning_rate: 3.125e-4,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub max_answer_len: usize,
    /// Stop once validation F1 reaches this value (percent).
    pub stop_at_f1: Option<f64>,
    pub mlm: MlmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            batch_size: 4,
            epochs: 10,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            seed: 42,
            max_answer_len: 30,
            stop_at_f1: None,
            mlm: MlmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate < 0.0 {
            return Err(TrainError::InvalidConfig("learning_rate must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(TrainError::InvalidConfig(
                "warmup_fraction must lie in [0, 1)".into(),
            ));
        }
        if self.max_answer_len == 0 {
            return Err(TrainError::InvalidConfig("max_answer_len must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub exact_match: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainRecord {
    pub step_losses: Vec<f64>,
    pub epoch_evals: Vec<EpochEval>,
    /// Per-epoch durations from the caller's clock; zeros without one.
    pub epoch_wall_clock_s: Vec<f64>,
}

impl TrainRecord {
    /// `step,loss` CSV of the training curve.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, loss) in self.step_losses.iter().enumerate() {
            s.push_str(&format!("{},{:.9}\n", i + 1, loss));
        }
        s
    }
}

/// Linear warmup to the base rate, then linear decay to zero.
fn schedule(base: f64, step: usize, total: usize, warmup_fraction: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let warmup = (warmup_fraction * total as f64) as usize;
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else if total > warmup {
        base * (total - step) as f64 / (total - warmup) as f64
    } else {
        base
    }
}

struct Optimizer {
    states: BTreeMap<String, AdamState>,
    weight_decay: f64,
}

impl Optimizer {
    fn new(model: &Model, weight_decay: f64) -> Self {
        Optimizer {
            states: model
                .param_names()
                .map(|n| {
                    (
                        n.clone(),
                        AdamState::new(model.param(n).expect("named param").numel()),
                    )
                })
                .collect(),
            weight_decay,
        }
    }

    fn apply(&mut self, model: &mut Model, g: &Graph, pv: &ParamVars, lr: f64) -> Result<(), TrainError> {
        let opt = AdamW {
            lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        };
        for (name, var) in pv {
            let Some(grad) = g.grad(*var) else { continue };
            let state = self.states.get_mut(name).expect("state per param");
            let param = model.param_mut(name).expect("named param");
            opt.step(param, &grad, state)?;
        }
        Ok(())
    }
}

fn qa_window_loss(
    model: &Model,
    g: &mut Graph,
    pv: &ParamVars,
    feature: &Feature,
    dropout_rng: Option<&mut rand_chacha::ChaCha12Rng>,
) -> Result<Var, TrainError> {
    let t = feature.input_ids.len();
    let positions: Vec<usize> = (0..t).collect();
    let hidden = model.embed(g, pv, &feature.input_ids, &positions, &feature.type_ids)?;
    let encoded = model.encode(g, pv, hidden, &feature.attention_mask, dropout_rng)?;
    let (s_logits, e_logits) = model.qa_span_logits(g, pv, encoded)?;
    let s_row = g.reshape(s_logits, vec![1, t])?;
    let e_row = g.reshape(e_logits, vec![1, t])?;
    let ls = g.cross_entropy(s_row, &[feature.start_position.expect("trainable window")])?;
    let le = g.cross_entropy(e_row, &[feature.end_position.expect("trainable window")])?;
    Ok(g.add(ls, le)?)
}

/// Fine-tune the span heads (and everything under them) on featurized
/// windows. Windows without resolvable positions are skipped; each epoch
/// optionally scores a validation split.
pub fn finetune_qa(
    model: &mut Model,
    train: &[Feature],
    val: Option<(&Dataset, &[Feature])>,
    config: &TrainConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<TrainRecord, TrainError> {
    config.validate()?;
    let trainable: Vec<&Feature> = train
        .iter()
        .filter(|f| f.start_position.is_some() && f.end_position.is_some())
        .collect();
    if trainable.is_empty() {
        return Err(TrainError::AllWindowsNull);
    }

    let steps_per_epoch = trainable.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut order_rng = seeds::stream(config.seed, "batch-order");
    let mut dropout_rng = seeds::stream(config.seed, "dropout");
    let use_dropout = model.config().dropout > 0.0;
    let mut optimizer = Optimizer::new(model, config.weight_decay);
    let mut record = TrainRecord::default();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let epoch_start = clock.map(|c| c());
        let mut order: Vec<usize> = (0..trainable.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            let lr = schedule(config.learning_rate, step, total_steps, config.warmup_fraction);
            let mut g = Graph::new();
            let pv = model.insert_params(&mut g, true);
            let mut batch_loss: Option<Var> = None;
            for &idx in chunk {
                let rng = use_dropout.then_some(&mut dropout_rng);
                let loss = qa_window_loss(model, &mut g, &pv, trainable[idx], rng)?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => g.add(acc, loss)?,
                });
            }
            let loss = g.scale(batch_loss.expect("non-empty batch"), 1.0 / chunk.len() as f64)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            record.step_losses.push(loss_value);
            g.backward(loss)?;
            optimizer.apply(model, &g, &pv, lr)?;
            step += 1;
        }

        if let Some((val_dataset, val_features)) = val {
            let contexts = contexts_by_id(val_dataset);
            let predictions =
                predict_spans(model, val_features, &contexts, config.max_answer_len)?;
            let report = evaluate(&predictions.answers, val_dataset);
            record.epoch_evals.push(EpochEval {
                epoch,
                exact_match: report.exact_match,
                f1: report.f1,
            });
            record
                .epoch_wall_clock_s
                .push(epoch_start.map_or(0.0, |t0| clock.unwrap()() - t0));
            if let Some(target) = config.stop_at_f1 {
                if report.f1 >= target {
                    break;
                }
            }
        } else {
            record
                .epoch_wall_clock_s
                .push(epoch_start.map_or(0.0, |t0| clock.unwrap()() - t0));
        }
    }
    Ok(record)
}

/// Map question id to its context text, for decoding predicted spans.
pub fn contexts_by_id(dataset: &Dataset) -> BTreeMap<String, String> {
    dataset
        .examples()
        .map(|(ctx, qa)| (qa.id.clone(), ctx.into()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpanPredictions {
    pub answers: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

/// Argmax of `start_logit[s] + end_logit[e]` over valid positions with
/// `s ≤ e` and `e − s + 1 ≤ max_answer_len`. First-encountered wins ties
/// (ascending s, then e).
pub fn best_span(
    start_logits: &[f64],
    end_logits: &[f64],
    valid: &[usize],
    max_answer_len: usize,
) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for &s in valid {
        for &e in valid {
            if e < s || e - s + 1 > max_answer_len {
                continue;
            }
            let score = start_logits[s] + end_logits[e];
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    best
}

/// Decode the best span per example: maximize `start_logit + end_logit`
/// subject to `s ≤ e`, a length cap, and both ends inside the context
/// segment; the best-scoring window wins across windows of one example.
pub fn predict_spans(
    model: &Model,
    features: &[Feature],
    contexts: &BTreeMap<String, String>,
    max_answer_len: usize,
) -> Result<SpanPredictions, TrainError> {
    let mut best: BTreeMap<String, (f64, String)> = BTreeMap::new();
    let mut seen: Vec<&str> = Vec::new();
    let mut warnings = Vec::new();

    for feature in features {
        if !seen.contains(&feature.example_id.as_str()) {
            seen.push(&feature.example_id);
        }
        let Some(context) = contexts.get(&feature.example_id) else {
            warnings.push(format!("no context for example {}", feature.example_id));
            continue;
        };
        let t = feature.input_ids.len();
        let positions: Vec<usize> = (0..t).collect();
        let mut g = Graph::new();
        let pv = model.insert_params(&mut g, false);
        let hidden = model.embed(&mut g, &pv, &feature.input_ids, &positions, &feature.type_ids)?;
        let encoded = model.encode(&mut g, &pv, hidden, &feature.attention_mask, None)?;
        let (s_var, e_var) = model.qa_span_logits(&mut g, &pv, encoded)?;
        let s_logits = g.value(s_var).data();
        let e_logits = g.value(e_var).data();

        let valid: Vec<usize> = feature.context_token_range().collect();
        if let Some((score, s, e)) = best_span(s_logits, e_logits, &valid, max_answer_len) {
            let (c0, _) = feature.offsets[s].expect("valid position has offsets");
            let (_, c1) = feature.offsets[e].expect("valid position has offsets");
            let text = char_slice(context, c0, c1);
            let entry = best.entry(feature.example_id.clone());
            use alloc::collections::btree_map::Entry;
            match entry {
                Entry::Vacant(v) => {
                    v.insert((score, text));
                }
                Entry::Occupied(mut o) => {
                    if score > o.get().0 {
                        o.insert((score, text));
                    }
                }
            }
        }
    }

    let mut answers: BTreeMap<String, String> = best
        .into_iter()
        .map(|(id, (_, text))| (id, text))
        .collect();
    for id in seen {
        if !answers.contains_key(id) {
            warnings.push(format!("no decodable window for example {id}; empty answer"));
            answers.insert(id.into(), String::new());
        }
    }
    Ok(SpanPredictions { answers, warnings })
}

/// Evaluate a model over featurized windows against their dataset.
pub fn evaluate_model(
    model: &Model,
    dataset: &Dataset,
    features: &[Feature],
    max_answer_len: usize,
) -> Result<EvalReport, TrainError> {
    let contexts = contexts_by_id(dataset);
    let predictions = predict_spans(model, features, &contexts, max_answer_len)?;
    Ok(evaluate(&predictions.answers, dataset))
}

/// Masked-language pretraining at toy scale: per sequence, each non-special
/// token is selected with `mask_prob`; selections go 80% to `[MASK]`, 10% to
/// a random token, 10% unchanged. Loss covers selected positions only.
pub fn pretrain_mlm(
    model: &mut Model,
    corpus_lines: &[String],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<TrainRecord, TrainError> {
    config.validate()?;
    let max_tokens = model.config().max_positions - 2;
    let sequences: Vec<Vec<usize>> = corpus_lines
        .iter()
        .map(|line| {
            let mut ids = vec![CLS];
            ids.extend(
                tokenizer
                    .tokenize(line)
                    .into_iter()
                    .take(max_tokens)
                    .map(|s| s.id),
            );
            ids.push(SEP);
            ids
        })
        .filter(|ids| ids.len() > 2)
        .collect();
    if sequences.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if sequences.len() < config.mlm.batch_size {
        return Err(TrainError::CorpusSmallerThanBatch {
            sequences: sequences.len(),
            batch: config.mlm.batch_size,
        });
    }

    let vocab = model.config().vocab_size;
    let mut mask_rng = seeds::stream(config.seed, "mlm-mask");
    let mut order_rng = seeds::stream(config.seed, "mlm-order");
    let mut optimizer = Optimizer::new(model, config.weight_decay);
    let mut record = TrainRecord::default();
    let mut step = 0usize;

    for _epoch in 0..config.mlm.epochs {
        let epoch_start = clock.map(|c| c());
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.mlm.batch_size) {
            let mut g = Graph::new();
            let pv = model.insert_params(&mut g, true);
            let mut batch_loss: Option<Var> = None;
            let mut scored_sequences = 0usize;
            for &idx in chunk {
                let ids = &sequences[idx];
                let mut inputs = ids.clone();
                let mut selected: Vec<usize> = Vec::new();
                let mut targets: Vec<usize> = Vec::new();
                for (pos, &id) in ids.iter().enumerate() {
                    if id < SPECIALS.len() {
                        continue;
                    }
                    if mask_rng.gen::<f64>() < config.mlm.mask_prob {
                        selected.push(pos);
                        targets.push(id);
                        let roll: f64 = mask_rng.gen();
                        if roll < 0.8 || vocab <= SPECIALS.len() {
                            inputs[pos] = MASK;
                        } else if roll < 0.9 {
                            inputs[pos] = mask_rng.gen_range(SPECIALS.len()..vocab);
                        }
                    }
                }
                if selected.is_empty() {
                    continue;
                }
                let t = inputs.len();
                let positions: Vec<usize> = (0..t).collect();
                let type_ids = vec![0usize; t];
                let mask = vec![1u8; t];
                let hidden = model.embed(&mut g, &pv, &inputs, &positions, &type_ids)?;
                let encoded = model.encode(&mut g, &pv, hidden, &mask, None)?;
                let logits = model.mlm_logits(&mut g, &pv, encoded)?;
                let picked = g.gather(logits, &selected)?;
                let loss = g.cross_entropy(picked, &targets)?;
                scored_sequences += 1;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => g.add(acc, loss)?,
                });
            }
            let Some(acc) = batch_loss else {
                // nothing selected anywhere: defined as zero loss, no update
                record.step_losses.push(0.0);
                step += 1;
                continue;
            };
            let loss = g.scale(acc, 1.0 / scored_sequences as f64)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            record.step_losses.push(loss_value);
            g.backward(loss)?;
            optimizer.apply(model, &g, &pv, config.mlm.learning_rate)?;
            step += 1;
        }
        record
            .epoch_wall_clock_s
            .push(epoch_start.map_or(0.0, |t0| clock.unwrap()() - t0));
    }
    Ok(record)
}
