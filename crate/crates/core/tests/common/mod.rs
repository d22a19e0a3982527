#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnt::classifier::ClassifierConfig;
use tnt::conditioner::{ConditionerConfig, ConditionerKind, TextEmbedder};
use tnt::datagen::{generate_dataset, MultimodalDataset, SyntheticSpec};
use tnt::encoder::EncoderConfig;
use tnt::episodes::{episode_rng, sample_episode, Episode};
use tnt::model::{ModelConfig, ModelState, Variant};

pub fn small_dataset(seed: u64) -> MultimodalDataset {
    generate_dataset(&SyntheticSpec {
        n_classes: 8,
        instances_per_class: 12,
        frame_count: 3,
        frame_dim: 5,
        latent_dim: 4,
        n_object_variants: 4,
        noise_scale: 1.5,
        text_informativeness: 1.0,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

pub fn small_config(kind: Option<ConditionerKind>, input_dim: usize, text_dim: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig::new(input_dim, vec![6, 5], 4),
        conditioner: kind.map(|kind| ConditionerConfig {
            kind,
            input_dim: match kind {
                ConditionerKind::Text => text_dim,
                ConditionerKind::Video => 3,
            },
            task_dim: 3,
            hidden_dim: 5,
            video_stage_dims: vec![4],
        }),
        classifier: ClassifierConfig::default(),
    }
}

/// Small random model whose FiLM head is perturbed away from zero so the
/// modulation path carries gradient in both directions.
pub fn small_model(variant: Variant, input_dim: usize, text_dim: usize, seed: u64) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config(variant.conditioner(), input_dim, text_dim);
    let mut model = ModelState::init(cfg, variant, &mut rng).unwrap();
    if let Some(c) = model.params.conditioner.as_mut() {
        let out = &mut c.film_generator.output;
        let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
        let init = tnt::nn::Linear::random(out.input_dim(), out.output_dim(), 0.3, &mut r);
        out.weight = init.weight;
    }
    model
}

pub fn embedder() -> TextEmbedder {
    TextEmbedder::hashed(16).unwrap()
}

pub fn episode(ds: &MultimodalDataset, n: usize, k: usize, b: usize, seed: u64, index: u64) -> Episode<'_> {
    sample_episode(ds, ds.classes(), n, k, b, &mut episode_rng(seed, index)).unwrap()
}
pub mod oracle;
