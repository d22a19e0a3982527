//! End-to-end experiment steps driven by a [`RunConfig`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conditioner::TextEmbedder;
use crate::config::{stage_seed, RunConfig};
use crate::datagen::{generate_dataset, load_dataset, MultimodalDataset};
use crate::encoder::EncoderParams;
use crate::episodes::{make_class_split, ClassSplit};
use crate::error::Result;
use crate::evaluator::{evaluate, EvalProtocol, MetricsReport};
use crate::model::{ModelState, Variant};
use crate::trainer::{meta_train, pretrain_backbone, CurveRecord};

/// Dataset, class split and text embedder shared by every step of a run.
pub struct Workspace {
    pub dataset: MultimodalDataset,
    pub split: ClassSplit,
    pub embedder: TextEmbedder,
}

impl Workspace {
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        let dataset = match &config.data.path {
            Some(p) => load_dataset(p)?,
            None => generate_dataset(&config.data.synthetic)?,
        };
        let s = &config.split;
        let split = make_class_split(dataset.classes(), (s.train, s.val, s.test), stage_seed(config.seed, "split"))?;
        Ok(Workspace {
            dataset,
            split,
            embedder: config.embedder()?,
        })
    }

    /// Fresh model for `variant`; conditioner and attention are random, the
    /// FiLM head is zero.
    pub fn init_model(&self, config: &RunConfig, variant: Variant) -> Result<ModelState> {
        let cfg = config.model_config(variant, self.dataset.frame_dim(), self.embedder.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, &format!("init/{}", variant.name())));
        ModelState::init(cfg, variant, &mut rng)
    }

    /// Stage one: supervised encoder training on the base classes.
    pub fn pretrain(&self, config: &RunConfig) -> Result<(EncoderParams, Vec<CurveRecord>)> {
        let skeleton = self.init_model(config, Variant::InductiveBaseline)?;
        let report = pretrain_backbone(
            &skeleton.params.encoder,
            &self.dataset,
            &self.split.train_classes,
            &config.pretrain_config(),
        )?;
        Ok((report.encoder, report.curve))
    }

    /// Stage two for one variant, starting from a pretrained encoder.
    pub fn meta_train(
        &self,
        config: &RunConfig,
        encoder: &EncoderParams,
        variant: Variant,
        k_shot: usize,
        workers: usize,
    ) -> Result<(ModelState, Vec<CurveRecord>)> {
        let mut model = self.init_model(config, variant)?;
        model.params.encoder = encoder.clone();
        let report = meta_train(
            model,
            &self.dataset,
            &self.split.train_classes,
            &self.embedder,
            &config.train_config_with_shots(k_shot),
            workers,
        )?;
        Ok((report.model, report.curve))
    }

    pub fn evaluate_test(&self, model: &ModelState, protocol: &EvalProtocol, workers: usize) -> Result<MetricsReport> {
        evaluate(model, &self.dataset, &self.split.test_classes, &self.embedder, protocol, workers)
    }

    pub fn evaluate_val(&self, model: &ModelState, protocol: &EvalProtocol, workers: usize) -> Result<MetricsReport> {
        evaluate(model, &self.dataset, &self.split.val_classes, &self.embedder, protocol, workers)
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub k_shot: usize,
    pub report: MetricsReport,
}

/// Meta-trains every requested variant at every shot count from one
/// pretrained encoder and evaluates them on paired test episodes.
pub fn run_ablation(
    ws: &Workspace,
    config: &RunConfig,
    encoder: &EncoderParams,
    workers: usize,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &k in &config.ablate.k_shots {
        for &variant in &config.ablate.variants {
            let (model, _) = ws.meta_train(config, encoder, variant, k, workers)?;
            let protocol = EvalProtocol {
                k_shot: k,
                variant,
                ..config.eval_protocol()
            };
            let report = ws.evaluate_test(&model, &protocol, workers)?;
            rows.push(AblationRow {
                variant,
                k_shot: k,
                report,
            });
        }
    }
    Ok(rows)
}
