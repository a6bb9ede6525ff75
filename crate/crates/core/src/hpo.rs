//! Population-based training: a population of fine-tuning runs whose
//! weights and hyperparameters evolve jointly. Each generation every member
//! trains and scores; the bottom quantile copies weights and hyperparameters
//! from a top-quantile member (exploit), then perturbs or resamples each
//! hyperparameter (explore).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Feature};
use crate::mathx;
use crate::model::{Dtype, Model};
use crate::seeds;
use crate::trainer::{evaluate_model, finetune_qa, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum HpoError {
    EmptyPopulation,
    UnscoredMember { id: usize },
    BadSpace(String),
    Trainable { member: usize, message: String },
}

impl fmt::Display for HpoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HpoError::EmptyPopulation => write!(f, "population must hold at least one member"),
            HpoError::UnscoredMember { id } => {
                write!(f, "member {id} has no score this generation")
            }
            HpoError::BadSpace(msg) => write!(f, "invalid search space: {msg}"),
            HpoError::Trainable { member, message } => {
                write!(f, "member {member} failed: {message}")
            }
        }
    }
}

/// One hyperparameter's distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    LogUniform { bounds: (f64, f64) },
    Uniform { bounds: (f64, f64) },
    Categorical { choices: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub params: Vec<ParamSpace>,
}

pub type HyperParams = BTreeMap<String, f64>;

impl SearchSpace {
    pub fn validate(&self) -> Result<(), HpoError> {
        for p in &self.params {
            match &p.kind {
                ParamKind::LogUniform { bounds: (lo, hi) } => {
                    if !(*lo > 0.0 && lo <= hi) {
                        return Err(HpoError::BadSpace(format!(
                            "{}: log_uniform needs 0 < lo <= hi, got [{lo}, {hi}]",
                            p.name
                        )));
                    }
                }
                ParamKind::Uniform { bounds: (lo, hi) } => {
                    if lo > hi {
                        return Err(HpoError::BadSpace(format!(
                            "{}: uniform needs lo <= hi, got [{lo}, {hi}]",
                            p.name
                        )));
                    }
                }
                ParamKind::Categorical { choices } => {
                    if choices.is_empty() {
                        return Err(HpoError::BadSpace(format!("{}: no choices", p.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// The stock QA fine-tuning space: learning rate, dropout, warmup
    /// fraction, batch size.
    pub fn default_qa() -> Self {
        SearchSpace {
            params: vec![
                ParamSpace {
                    name: "learning_rate".into(),
                    kind: ParamKind::LogUniform {
                        bounds: (1e-5, 1e-4),
                    },
                },
                ParamSpace {
                    name: "dropout".into(),
                    kind: ParamKind::Uniform { bounds: (0.0, 0.3) },
                },
                ParamSpace {
                    name: "warmup_fraction".into(),
                    kind: ParamKind::Uniform { bounds: (0.0, 0.2) },
                },
                ParamSpace {
                    name: "batch_size".into(),
                    kind: ParamKind::Categorical {
                        choices: vec![4.0, 8.0, 16.0],
                    },
                },
            ],
        }
    }
}

/// Draw one configuration. Degenerate bounds collapse to the bound itself.
pub fn sample_space(space: &SearchSpace, rng: &mut ChaCha12Rng) -> HyperParams {
    let mut hp = BTreeMap::new();
    for p in &space.params {
        let v = match &p.kind {
            ParamKind::LogUniform { bounds: (lo, hi) } => {
                if lo == hi {
                    *lo
                } else {
                    mathx::exp(rng.gen_range(mathx::ln(*lo)..mathx::ln(*hi)))
                }
            }
            ParamKind::Uniform { bounds: (lo, hi) } => {
                if lo == hi {
                    *lo
                } else {
                    rng.gen_range(*lo..*hi)
                }
            }
            ParamKind::Categorical { choices } => choices[rng.gen_range(0..choices.len())],
        };
        hp.insert(p.name.clone(), v);
    }
    hp
}

/// Perturb each hyperparameter: with `resample_prob` redraw it from the
/// space; otherwise scale numeric values by a random perturb factor (clipped
/// to bounds) and redraw categorical ones.
fn explore(
    space: &SearchSpace,
    hp: &HyperParams,
    perturb_factors: (f64, f64),
    resample_prob: f64,
    rng: &mut ChaCha12Rng,
) -> HyperParams {
    let mut out = hp.clone();
    for p in &space.params {
        let current = hp.get(&p.name).copied();
        let resample = rng.gen::<f64>() < resample_prob;
        let v = match (&p.kind, current) {
            (ParamKind::LogUniform { bounds: (lo, hi) }, Some(v)) if !resample => {
                let factor = if rng.gen::<bool>() {
                    perturb_factors.1
                } else {
                    perturb_factors.0
                };
                (v * factor).clamp(*lo, *hi)
            }
            (ParamKind::Uniform { bounds: (lo, hi) }, Some(v)) if !resample => {
                let factor = if rng.gen::<bool>() {
                    perturb_factors.1
                } else {
                    perturb_factors.0
                };
                (v * factor).clamp(*lo, *hi)
            }
            _ => {
                // categorical, resample hit, or a missing entry
                let single = SearchSpace {
                    params: vec![p.clone()],
                };
                sample_space(&single, rng)[&p.name]
            }
        };
        out.insert(p.name.clone(), v);
    }
    out
}

/// A training run that PBT can drive: advance by optimizer steps, score on
/// validation data, and snapshot/restore weights as bytes.
pub trait Trainable {
    fn train(&mut self, hyperparams: &HyperParams, steps: usize) -> Result<(), String>;
    fn score(&mut self) -> Result<f64, String>;
    fn save_state(&self) -> Vec<u8>;
    fn restore_state(&mut self, state: &[u8]) -> Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Kept,
    ExploitedFrom(usize),
    Explored,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineageEntry {
    pub generation: usize,
    pub action: Action,
}

/// Book-keeping for one population member; the weights live in its
/// `Trainable`.
pub struct Member<T> {
    pub id: usize,
    pub hyperparams: HyperParams,
    pub score: Option<f64>,
    pub lineage: Vec<LineageEntry>,
    pub trainable: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbtConfig {
    pub population_size: usize,
    pub generations: usize,
    pub steps_per_generation: usize,
    pub quantile: f64,
    pub perturb_factors: (f64, f64),
    pub resample_prob: f64,
    pub seed: u64,
}

impl Default for PbtConfig {
    fn default() -> Self {
        PbtConfig {
            population_size: 8,
            generations: 5,
            steps_per_generation: 50,
            quantile: 0.25,
            perturb_factors: (0.8, 1.25),
            resample_prob: 0.25,
            seed: 42,
        }
    }
}

/// One exploit/explore pass. Every member must carry a score. The bottom
/// `quantile` copy weights and hyperparameters from a uniformly chosen
/// top-`quantile` member, then explore; everyone else is kept. Scores reset.
pub fn pbt_step<T: Trainable>(
    members: &mut [Member<T>],
    space: &SearchSpace,
    config: &PbtConfig,
    generation: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(), HpoError> {
    for m in members.iter() {
        if m.score.is_none() {
            return Err(HpoError::UnscoredMember { id: m.id });
        }
    }
    let n = members.len();
    let k = ((n as f64 * config.quantile) as usize).min(n / 2);
    if n < 2 || k == 0 {
        for m in members.iter_mut() {
            m.lineage.push(LineageEntry {
                generation,
                action: Action::Kept,
            });
            m.score = None;
        }
        return Ok(());
    }

    // rank by score descending, member id breaking ties
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        members[b]
            .score
            .unwrap()
            .total_cmp(&members[a].score.unwrap())
            .then(members[a].id.cmp(&members[b].id))
    });
    let top: Vec<usize> = ranked[..k].to_vec();
    let bottom: Vec<usize> = ranked[n - k..].to_vec();

    for &loser in &bottom {
        let &source = &top[rng.gen_range(0..top.len())];
        let (state, source_hp, source_id) = {
            let src = &members[source];
            (src.trainable.save_state(), src.hyperparams.clone(), src.id)
        };
        let loser_member = &mut members[loser];
        loser_member
            .trainable
            .restore_state(&state)
            .map_err(|message| HpoError::Trainable {
                member: loser_member.id,
                message,
            })?;
        loser_member.hyperparams = source_hp;
        loser_member.lineage.push(LineageEntry {
            generation,
            action: Action::ExploitedFrom(source_id),
        });
        loser_member.hyperparams = explore(
            space,
            &loser_member.hyperparams,
            config.perturb_factors,
            config.resample_prob,
            rng,
        );
        loser_member.lineage.push(LineageEntry {
            generation,
            action: Action::Explored,
        });
    }
    for (i, m) in members.iter_mut().enumerate() {
        if !bottom.contains(&i) {
            m.lineage.push(LineageEntry {
                generation,
                action: Action::Kept,
            });
        }
        m.score = None;
    }
    Ok(())
}

/// Runs one generation of training plus scoring over the whole population.
/// The serial runner is always available; callers with threads can provide
/// their own.
pub trait GenerationRunner<T: Trainable> {
    fn run(&mut self, members: &mut [Member<T>], steps: usize) -> Result<(), HpoError>;
}

pub struct SerialRunner;

impl<T: Trainable> GenerationRunner<T> for SerialRunner {
    fn run(&mut self, members: &mut [Member<T>], steps: usize) -> Result<(), HpoError> {
        for m in members {
            train_and_score(m, steps)?;
        }
        Ok(())
    }
}

/// Train one member for a generation and record its score. Exposed so
/// parallel runners reuse the exact same member semantics.
pub fn train_and_score<T: Trainable>(m: &mut Member<T>, steps: usize) -> Result<(), HpoError> {
    m.trainable
        .train(&m.hyperparams, steps)
        .map_err(|message| HpoError::Trainable {
            member: m.id,
            message,
        })?;
    let score = m.trainable.score().map_err(|message| HpoError::Trainable {
        member: m.id,
        message,
    })?;
    m.score = Some(score);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub generation: usize,
    pub member: usize,
    pub score: f64,
    pub hyperparams: HyperParams,
}

pub struct PbtOutcome {
    pub best_score: f64,
    pub best_hyperparams: HyperParams,
    pub best_state: Vec<u8>,
    pub history: Vec<HistoryRow>,
    pub lineages: Vec<Vec<LineageEntry>>,
}

impl PbtOutcome {
    /// `generation,member,score,<params...>` rows in space order.
    pub fn history_csv(&self, space: &SearchSpace) -> String {
        let mut s = String::from("generation,member,score");
        for p in &space.params {
            s.push(',');
            s.push_str(&p.name);
        }
        s.push('\n');
        for row in &self.history {
            s.push_str(&format!("{},{},{:.6}", row.generation, row.member, row.score));
            for p in &space.params {
                s.push_str(&format!(",{}", row.hyperparams.get(&p.name).copied().unwrap_or(f64::NAN)));
            }
            s.push('\n');
        }
        s
    }
}

/// The full loop: initialize a population from the space, then alternate
/// {train, score, exploit/explore} for the configured generations, tracking
/// the best member ever seen. Fully deterministic in the seed.
pub fn pbt_search<T: Trainable>(
    factory: &mut dyn FnMut(usize, u64) -> Result<T, String>,
    space: &SearchSpace,
    config: &PbtConfig,
    runner: &mut dyn GenerationRunner<T>,
) -> Result<PbtOutcome, HpoError> {
    if config.population_size == 0 {
        return Err(HpoError::EmptyPopulation);
    }
    space.validate()?;

    let mut sample_rng = seeds::stream(config.seed, "hpo-sample");
    let mut evolve_rng = seeds::stream(config.seed, "hpo-evolve");
    let mut members: Vec<Member<T>> = Vec::with_capacity(config.population_size);
    for id in 0..config.population_size {
        let member_seed = seeds::derive_indexed(config.seed, "hpo-member", id as u64);
        let trainable = factory(id, member_seed)
            .map_err(|message| HpoError::Trainable { member: id, message })?;
        members.push(Member {
            id,
            hyperparams: sample_space(space, &mut sample_rng),
            score: None,
            lineage: Vec::new(),
            trainable,
        });
    }

    let mut history = Vec::new();
    let mut best: Option<(f64, HyperParams, Vec<u8>)> = None;
    for generation in 0..config.generations {
        runner.run(&mut members, config.steps_per_generation)?;
        for m in &members {
            let score = m.score.ok_or(HpoError::UnscoredMember { id: m.id })?;
            history.push(HistoryRow {
                generation,
                member: m.id,
                score,
                hyperparams: m.hyperparams.clone(),
            });
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, m.hyperparams.clone(), m.trainable.save_state()));
            }
        }
        if generation + 1 < config.generations {
            pbt_step(&mut members, space, config, generation, &mut evolve_rng)?;
        }
    }

    let (best_score, best_hyperparams, best_state) =
        best.ok_or(HpoError::EmptyPopulation)?;
    Ok(PbtOutcome {
        best_score,
        best_hyperparams,
        best_state,
        history,
        lineages: members.into_iter().map(|m| m.lineage).collect(),
    })
}

// ---------------------------------------------------------------------------
// Built-in trainables
// ---------------------------------------------------------------------------

/// Analytic surrogate objective: score = 1 − (ln lr − ln 3e-5)² / 2. No
/// weights; exploit copies only hyperparameters. Used by the tuner's
/// self-test mode.
pub struct SurrogateTrainable;

pub const SURROGATE_OPTIMUM_LR: f64 = 3e-5;

impl SurrogateTrainable {
    pub fn score_for(hp: &HyperParams) -> f64 {
        let lr = hp.get("learning_rate").copied().unwrap_or(SURROGATE_OPTIMUM_LR);
        let d = mathx::ln(lr) - mathx::ln(SURROGATE_OPTIMUM_LR);
        1.0 - d * d / 2.0
    }
}

pub struct SurrogateMemberState {
    hp: HyperParams,
}

impl Trainable for SurrogateMemberState {
    fn train(&mut self, hyperparams: &HyperParams, _steps: usize) -> Result<(), String> {
        self.hp = hyperparams.clone();
        Ok(())
    }

    fn score(&mut self) -> Result<f64, String> {
        Ok(SurrogateTrainable::score_for(&self.hp))
    }

    fn save_state(&self) -> Vec<u8> {
        Vec::new()
    }

    fn restore_state(&mut self, _state: &[u8]) -> Result<(), String> {
        Ok(())
    }
}

pub fn surrogate_factory() -> impl FnMut(usize, u64) -> Result<SurrogateMemberState, String> {
    |_, _| {
        Ok(SurrogateMemberState {
            hp: HyperParams::new(),
        })
    }
}

/// Fine-tuning member over featurized QA windows: hyperparameters map onto
/// the trainer's learning rate, dropout, warmup, and batch size; state
/// snapshots are model checkpoints. Restoring resets optimizer moments.
pub struct QaTrainable {
    model: Model,
    train_features: Vec<Feature>,
    val_dataset: Dataset,
    val_features: Vec<Feature>,
    base: TrainConfig,
    member_seed: u64,
    generation: u64,
}

impl QaTrainable {
    pub fn new(
        model: Model,
        train_features: Vec<Feature>,
        val_dataset: Dataset,
        val_features: Vec<Feature>,
        base: TrainConfig,
        member_seed: u64,
    ) -> Self {
        QaTrainable {
            model,
            train_features,
            val_dataset,
            val_features,
            base,
            member_seed,
            generation: 0,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl Trainable for QaTrainable {
    fn train(&mut self, hyperparams: &HyperParams, steps: usize) -> Result<(), String> {
        let lr = hyperparams
            .get("learning_rate")
            .copied()
            .unwrap_or(self.base.learning_rate);
        let batch_size = hyperparams
            .get("batch_size")
            .map(|b| *b as usize)
            .unwrap_or(self.base.batch_size)
            .max(1);
        let warmup = hyperparams
            .get("warmup_fraction")
            .copied()
            .unwrap_or(self.base.warmup_fraction);
        if let Some(dropout) = hyperparams.get("dropout") {
            self.model.set_dropout(*dropout).map_err(|e| e.to_string())?;
        }
        // steps -> whole epochs over the trainable windows, at least one
        let steps_per_epoch = self.train_features.len().div_ceil(batch_size).max(1);
        let epochs = steps.div_ceil(steps_per_epoch).max(1);
        let config = TrainConfig {
            learning_rate: lr,
            batch_size,
            epochs,
            warmup_fraction: warmup,
            seed: self
                .member_seed
                .wrapping_add(self.generation.wrapping_mul(0x9e37_79b9)),
            stop_at_f1: None,
            ..self.base.clone()
        };
        self.generation += 1;
        finetune_qa(&mut self.model, &self.train_features, None, &config, None)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn score(&mut self) -> Result<f64, String> {
        evaluate_model(
            &self.model,
            &self.val_dataset,
            &self.val_features,
            self.base.max_answer_len,
        )
        .map(|r| r.f1)
        .map_err(|e| e.to_string())
    }

    fn save_state(&self) -> Vec<u8> {
        self.model.to_bytes(Dtype::F64)
    }

    fn restore_state(&mut self, state: &[u8]) -> Result<(), String> {
        self.model = Model::from_bytes(state).map_err(|e| e.to_string())?;
        Ok(())
    }
}
