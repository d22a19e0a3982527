//! Run configuration: a TOML document with one section per pipeline stage.
//!
//! Every field has a default, so an empty file describes the default
//! synthetic benchmark; a file only needs the keys it changes. Unknown keys are rejected. Overrides use dotted
//! paths (`train.episodes=3000`) and are applied to the TOML tree before
//! it is deserialized, so they are validated exactly like file contents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::conditioner::{ConditionerConfig, ConditionerKind, TextEmbedder};
use crate::datagen::SyntheticSpec;
use crate::encoder::EncoderConfig;
use crate::nn::NormScope;
use crate::episodes::splitmix64;
use crate::error::{Error, Result};
use crate::evaluator::EvalProtocol;
use crate::model::{ModelConfig, Variant};
use crate::nn::AdamConfig;
use crate::trainer::{GradCheckOptions, PretrainConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out: PathBuf,
    pub data: DataSection,
    pub split: SplitSection,
    pub encoder: EncoderSection,
    pub conditioner: ConditionerSection,
    pub classifier: ClassifierConfig,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub validation: PhaseSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
    pub sweep: SweepSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2021,
            out: PathBuf::from("runs/default"),
            data: DataSection::default(),
            split: SplitSection::default(),
            encoder: EncoderSection::default(),
            conditioner: ConditionerSection::default(),
            classifier: ClassifierConfig::default(),
            pretrain: PretrainSection::default(),
            train: TrainSection::default(),
            validation: PhaseSection {
                query_size: 50,
                n_episodes: 200,
            },
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
            sweep: SweepSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset file to load instead of generating one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 64,
            val: 12,
            test: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub stage_dims: Vec<usize>,
    pub output_dim: usize,
    pub norm: NormScope,
    pub variance_floor: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            stage_dims: vec![64],
            output_dim: 64,
            norm: NormScope::default(),
            variance_floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderBackend {
    #[default]
    Hashed,
    Lookup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionerSection {
    pub embedder: EmbedderBackend,
    /// Width of the hashed embedding; ignored for lookup tables.
    pub text_dim: usize,
    /// Lookup file of `{"text", "vector"}` records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lookup_path: Option<PathBuf>,
    pub task_dim: usize,
    pub hidden_dim: usize,
    pub video_stage_dims: Vec<usize>,
}

impl Default for ConditionerSection {
    fn default() -> Self {
        ConditionerSection {
            embedder: EmbedderBackend::Hashed,
            text_dim: 1024,
            lookup_path: None,
            task_dim: 32,
            hidden_dim: 64,
            video_stage_dims: vec![32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSection {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub variant: Variant,
    /// Checkpoint written by `pretrain`; without one the backbone is
    /// pretrained in-process.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backbone: Option<PathBuf>,
    pub episodes: u64,
    pub task_batch: usize,
    pub optimizer: AdamConfig,
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            variant: Variant::Tnt,
            backbone: None,
            episodes: d.episodes,
            task_batch: d.task_batch,
            optimizer: d.optimizer,
            n_way: d.n_way,
            k_shot: d.k_shot,
            query_size: d.query_size,
        }
    }
}

/// Query size and episode count of an evaluation phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub query_size: usize,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub variant: Variant,
    /// Checkpoint written by `meta-train`; without one the model is trained
    /// in-process.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,
    pub n_episodes: usize,
    /// Keep per-episode accuracies in the report records.
    pub per_episode: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            variant: Variant::Tnt,
            checkpoint: None,
            n_way: 5,
            k_shot: 1,
            query_size: 50,
            n_episodes: 2000,
            per_episode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub variants: Vec<Variant>,
    /// Shot counts to evaluate; each variant is meta-trained once per value.
    pub k_shots: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            variants: Variant::ALL.to_vec(),
            k_shots: vec![1, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub query_sizes: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            query_sizes: vec![5, 10, 20, 50, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub episodes: usize,
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Small widths keep the finite-difference sweep fast.
    pub stage_dims: Vec<usize>,
    pub output_dim: usize,
    pub task_dim: usize,
    pub hidden_dim: usize,
    /// Width of the hashed text embedding used by the check.
    pub text_dim: usize,
    pub query_size: usize,
    /// Scale of the random FiLM output weights, so every path carries gradient.
    pub film_init_scale: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            episodes: 3,
            samples: 200,
            step: 1e-5,
            tolerance: 1e-4,
            stage_dims: vec![8],
            output_dim: 6,
            task_dim: 4,
            hidden_dim: 6,
            text_dim: 16,
            query_size: 10,
            film_init_scale: 0.3,
        }
    }
}

impl GradcheckSection {
    pub fn options(&self, seed: u64) -> GradCheckOptions {
        GradCheckOptions {
            step: self.step,
            samples: self.samples,
            seed,
            ..GradCheckOptions::default()
        }
    }
}

/// Seed for one named stage of a run, derived from the run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let tag = crate::conditioner::fnv1a64(stage.as_bytes());
    splitmix64(seed ^ tag)
}

impl RunConfig {
    /// Parses a TOML document, applying `overrides` (`dotted.key=value`).
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        let mut root = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::Internal(format!("cannot serialize defaults: {e}")))?;
        merge(&mut root, file);
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or uses defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.path.is_none() {
            self.data.synthetic.validate()?;
        }
        if self.encoder.stage_dims.is_empty() || self.encoder.stage_dims.contains(&0) {
            return Err(Error::Config("encoder.stage_dims must be non-empty and positive".into()));
        }
        if self.encoder.output_dim == 0 {
            return Err(Error::Config("encoder.output_dim must be positive".into()));
        }
        let c = &self.conditioner;
        if c.task_dim == 0 || c.hidden_dim == 0 || c.text_dim == 0 || self.gradcheck.text_dim == 0 {
            return Err(Error::Config(
                "conditioner.task_dim, hidden_dim and text_dim must be positive".into(),
            ));
        }
        if c.embedder == EmbedderBackend::Lookup && c.lookup_path.is_none() {
            return Err(Error::Config("conditioner.embedder = \"lookup\" needs conditioner.lookup_path".into()));
        }
        self.classifier.validate()?;
        if self.pretrain.batch_size == 0 || !(self.pretrain.learning_rate >= 0.0) {
            return Err(Error::Config("pretrain.batch_size must be positive and learning_rate >= 0".into()));
        }
        self.train_config().validate()?;
        for (name, phase_b, n_way) in [
            ("validation", self.validation.query_size, self.train.n_way),
            ("eval", self.eval.query_size, self.eval.n_way),
        ] {
            if phase_b == 0 || phase_b % n_way != 0 {
                return Err(Error::Config(format!(
                    "{name}.query_size {phase_b} must be a positive multiple of n_way {n_way}"
                )));
            }
        }
        self.eval_protocol().validate()?;
        for (name, classes, n_way) in [
            ("split.train", self.split.train, self.train.n_way),
            ("split.val", self.split.val, self.train.n_way),
            ("split.test", self.split.test, self.eval.n_way),
        ] {
            if classes < n_way {
                return Err(Error::Config(format!("{name} = {classes} cannot supply {n_way}-way episodes")));
            }
        }
        if self.validation.n_episodes == 0 {
            return Err(Error::Config("validation.n_episodes must be at least 1".into()));
        }
        if let Some(&b) = self.sweep.query_sizes.iter().find(|&&b| b == 0 || b % self.eval.n_way != 0) {
            return Err(Error::Config(format!(
                "sweep.query_sizes entry {b} is not a positive multiple of eval.n_way"
            )));
        }
        if self.ablate.k_shots.contains(&0) {
            return Err(Error::Config("ablate.k_shots entries must be positive".into()));
        }
        if self.gradcheck.episodes == 0 || !(self.gradcheck.step > 0.0) {
            return Err(Error::Config("gradcheck.episodes and gradcheck.step must be positive".into()));
        }
        Ok(())
    }

    pub fn embedder(&self) -> Result<TextEmbedder> {
        match self.conditioner.embedder {
            EmbedderBackend::Hashed => TextEmbedder::hashed(self.conditioner.text_dim),
            EmbedderBackend::Lookup => {
                let path = self.conditioner.lookup_path.as_ref().expect("checked by validate");
                TextEmbedder::load_lookup(path)
            }
        }
    }

    /// Model configuration for `variant` on frames of width `input_dim`.
    pub fn model_config(&self, variant: Variant, input_dim: usize, text_dim: usize) -> ModelConfig {
        let e = &self.encoder;
        let c = &self.conditioner;
        ModelConfig {
            encoder: EncoderConfig {
                input_dim,
                stage_dims: e.stage_dims.clone(),
                output_dim: e.output_dim,
                norm: e.norm,
                variance_floor: e.variance_floor,
            },
            conditioner: variant.conditioner().map(|kind| ConditionerConfig {
                kind,
                input_dim: match kind {
                    ConditionerKind::Text => text_dim,
                    ConditionerKind::Video => input_dim,
                },
                task_dim: c.task_dim,
                hidden_dim: c.hidden_dim,
                video_stage_dims: c.video_stage_dims.clone(),
            }),
            classifier: self.classifier.clone(),
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            learning_rate: self.pretrain.learning_rate,
            batch_size: self.pretrain.batch_size,
            seed: stage_seed(self.seed, "pretrain"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train_config_with_shots(self.train.k_shot)
    }

    pub fn train_config_with_shots(&self, k_shot: usize) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            episodes: t.episodes,
            task_batch: t.task_batch,
            optimizer: t.optimizer,
            n_way: t.n_way,
            k_shot,
            query_size: t.query_size,
            seed: stage_seed(self.seed, "meta-train"),
        }
    }

    pub fn validation_protocol(&self, variant: Variant) -> EvalProtocol {
        EvalProtocol {
            n_way: self.train.n_way,
            k_shot: self.train.k_shot,
            query_size: self.validation.query_size,
            n_episodes: self.validation.n_episodes,
            seed: stage_seed(self.seed, "validation"),
            variant,
        }
    }

    pub fn eval_protocol(&self) -> EvalProtocol {
        let e = &self.eval;
        EvalProtocol {
            n_way: e.n_way,
            k_shot: e.k_shot,
            query_size: e.query_size,
            n_episodes: e.n_episodes,
            seed: stage_seed(self.seed, "eval"),
            variant: e.variant,
        }
    }
}

/// Overlays `top` onto `base`, recursing into tables present in both.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = parse_value(raw.trim());
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{part}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal if it parses as one, else a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
