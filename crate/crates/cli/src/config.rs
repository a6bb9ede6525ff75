//! Run configuration: one JSON file drives every command. Flags override
//! file values; file values override defaults. One master seed fans out to
//! named sub-streams, so toggling one stage leaves the others' randomness
//! untouched.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lrqa_core::align::AlignParams;
use lrqa_core::hpo::{PbtConfig, SearchSpace};
use lrqa_core::model::EncoderConfig;
use lrqa_core::tokenizer::Casing;
use lrqa_core::trainer::TrainConfig;

pub const CONFIG_ENV_VAR: &str = "LRQA_CONFIG";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Training dataset (SQuAD v1.1 JSON).
    pub train: Option<PathBuf>,
    /// Held-out dev dataset; without it, 10% of train is split off.
    pub dev: Option<PathBuf>,
    /// Source dataset to align (usually the high-resource original).
    pub source: Option<PathBuf>,
    /// Parallel translations, JSON Lines.
    pub translations: Option<PathBuf>,
    /// Pretraining text, one sentence per line.
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizeConfig {
    pub max_len: usize,
    pub stride: usize,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            max_len: 384,
            stride: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Vocabulary size; defaults to the model's vocab_size.
    pub vocab_size: Option<usize>,
    pub casing: Casing,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vocab_size: None,
            casing: Casing::Lower,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    pub avg_watts: f64,
    /// Shell command printing instantaneous watts, polled at the cadence.
    pub sampler_cmd: Option<String>,
    pub sampler_cadence_s: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            avg_watts: 100.0,
            sampler_cmd: None,
            sampler_cadence_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarbonConfig {
    pub intensity_g_per_kwh: f64,
}

impl Default for CarbonConfig {
    fn default() -> Self {
        CarbonConfig {
            intensity_g_per_kwh: lrqa_core::cost::DEFAULT_INTENSITY_G_PER_KWH,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub power: PowerConfig,
    pub carbon: CarbonConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HpoSection {
    pub space: SearchSpace,
    pub population_size: usize,
    pub generations: usize,
    pub steps_per_generation: usize,
    pub quantile: f64,
    pub perturb_factors: (f64, f64),
    pub resample_prob: f64,
}

impl Default for HpoSection {
    fn default() -> Self {
        let pbt = PbtConfig::default();
        HpoSection {
            space: SearchSpace::default_qa(),
            population_size: pbt.population_size,
            generations: pbt.generations,
            steps_per_generation: pbt.steps_per_generation,
            quantile: pbt.quantile,
            perturb_factors: pbt.perturb_factors,
            resample_prob: pbt.resample_prob,
        }
    }
}

impl HpoSection {
    pub fn pbt_config(&self, seed: u64) -> PbtConfig {
        PbtConfig {
            population_size: self.population_size,
            generations: self.generations,
            steps_per_generation: self.steps_per_generation,
            quantile: self.quantile,
            perturb_factors: self.perturb_factors,
            resample_prob: self.resample_prob,
            seed,
        }
    }
}

// no deny_unknown_fields here: serde cannot combine it with flatten
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignSection {
    #[serde(flatten)]
    pub params: AlignParams,
    /// Line-in/line-out shell command used to produce a translations file
    /// when none exists.
    pub translator_cmd: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
    pub featurize: FeaturizeConfig,
    pub tokenizer: TokenizerConfig,
    pub align: AlignSection,
    pub hpo: HpoSection,
    pub cost: CostConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
            data: DataPaths::default(),
            featurize: FeaturizeConfig::default(),
            tokenizer: TokenizerConfig::default(),
            align: AlignSection::default(),
            hpo: HpoSection::default(),
            cost: CostConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural validation; returns non-fatal warnings (e.g. an
    /// unfactorized embedding larger than the hidden size).
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = match self.model.validate() {
            Ok(w) => w,
            Err(e) => bail!("model: {e}"),
        };
        if let Err(e) = self.train.validate() {
            bail!("train: {e}");
        }
        if let Err(e) = self.align.params.validate() {
            bail!("align: {e}");
        }
        if let Err(e) = self.hpo.space.validate() {
            bail!("hpo: {e}");
        }
        // path existence is checked by each command for the fields it uses:
        // pipeline stages legitimately reference files earlier stages write
        Ok(warnings)
    }

    /// Seed propagated into the trainer section.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn tokenizer_vocab_size(&self) -> usize {
        self.tokenizer.vocab_size.unwrap_or(self.model.vocab_size)
    }
}
