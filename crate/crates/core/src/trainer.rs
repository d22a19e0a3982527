//! Two-stage optimization and gradient verification.
//!
//! Stage one trains the encoder on the base classes with a temporary linear
//! head and identity modulation. Stage two freezes the encoder and
//! meta-trains the conditioner and the attention projections episodically.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::cross_entropy;
use crate::conditioner::TextEmbedder;
use crate::datagen::MultimodalDataset;
use crate::encoder::{encode_backward, encode_batch, EncoderParams, FilmParams};
use crate::episodes::{episode_rng, episode_seed, sample_episode, Episode};
use crate::error::{Error, Result};
use crate::model::{episode_loss_and_grads, forward_episode, ModelParams, ModelState, Trainable};
use crate::nn::{log_softmax_rows, Adam, AdamConfig, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    #[serde(default = "default_pretrain_epochs")]
    pub epochs: usize,
    #[serde(default = "default_pretrain_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_pretrain_epochs() -> usize {
    12
}
fn default_pretrain_lr() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    32
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: default_pretrain_epochs(),
            learning_rate: default_pretrain_lr(),
            batch_size: default_batch_size(),
            seed: 0,
        }
    }
}

/// One line of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub step: u64,
    pub mean_loss: f64,
    pub accuracy: f64,
}

pub struct PretrainReport {
    pub encoder: EncoderParams,
    /// One record per epoch; `accuracy` is the training accuracy of that epoch.
    pub curve: Vec<CurveRecord>,
}

fn linear_slices(l: &mut Linear) -> [&mut [f64]; 2] {
    [
        l.weight.as_slice_mut().expect("standard layout"),
        l.bias.as_slice_mut().expect("standard layout"),
    ]
}

fn encoder_slices(e: &mut EncoderParams) -> Vec<&mut [f64]> {
    let mut out = Vec::new();
    for st in &mut e.stages {
        out.extend(linear_slices(st));
    }
    out.extend(linear_slices(&mut e.projection));
    out
}

/// Supervised training of the encoder over `classes` with a throwaway linear
/// classification head and identity FiLM.
pub fn pretrain_backbone(
    initial: &EncoderParams,
    dataset: &MultimodalDataset,
    classes: &BTreeSet<String>,
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    if classes.is_empty() {
        return Err(Error::Config("pretraining needs at least one base class".into()));
    }
    if config.batch_size == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::Config("invalid pretraining batch size or learning rate".into()));
    }
    let class_list: Vec<&String> = classes.iter().collect();
    let mut samples: Vec<(usize, usize)> = Vec::new();
    for (label, class) in class_list.iter().enumerate() {
        let members = dataset.class_members(class);
        if members.is_empty() {
            return Err(Error::Sampling(format!("base class `{class}` has no instances")));
        }
        samples.extend(members.iter().map(|&i| (i, label)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = initial.clone();
    let film = FilmParams::identity(&encoder.config.stage_dims);
    let mut head = Linear::random(encoder.config.output_dim, class_list.len(), 1.0, &mut rng);
    let sizes: Vec<usize> = {
        let mut e = encoder.clone();
        let mut h = head.clone();
        let mut all = encoder_slices(&mut e);
        all.extend(linear_slices(&mut h));
        all.iter().map(|s| s.len()).collect()
    };
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), &sizes);
    let instances = dataset.instances();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        samples.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (batch_idx, batch) in samples.chunks(config.batch_size).enumerate() {
            let videos: Vec<&Array2<f64>> = batch.iter().map(|&(i, _)| &instances[i].frames).collect();
            let labels: Vec<usize> = batch.iter().map(|&(_, l)| l).collect();
            let (emb, trace) = encode_batch(&videos, &encoder, &film)?;
            let logits = head.forward(emb.view());
            let log_probs = log_softmax_rows(&logits);
            let (loss, grad_logits) = cross_entropy(&log_probs, &labels);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite pretraining loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            loss_sum += loss * batch.len() as f64;
            hits += labels
                .iter()
                .zip(logits.rows())
                .filter(|(&y, row)| argmax(row.iter().copied()) == y)
                .count();
            let mut head_grad = head.zeros_like();
            let d_emb = head.backward(emb.view(), grad_logits.view(), &mut head_grad);
            let (mut enc_grad, _) = encode_backward(&trace, &encoder, &film, &d_emb);
            let mut grads = encoder_slices(&mut enc_grad);
            grads.extend(linear_slices(&mut head_grad));
            if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence(format!(
                    "non-finite pretraining gradient at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let grads: Vec<&[f64]> = grads.into_iter().map(|g| &*g).collect();
            let mut params = encoder_slices(&mut encoder);
            params.extend(linear_slices(&mut head));
            adam.update(&mut params, &grads);
        }
        curve.push(CurveRecord {
            step: epoch as u64 + 1,
            mean_loss: loss_sum / samples.len() as f64,
            accuracy: hits as f64 / samples.len() as f64,
        });
    }
    Ok(PretrainReport { encoder, curve })
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Episodic meta-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    #[serde(default = "default_task_batch")]
    pub task_batch: usize,
    #[serde(default = "default_meta_adam")]
    pub optimizer: AdamConfig,
    #[serde(default = "default_n_way")]
    pub n_way: usize,
    #[serde(default = "default_k_shot")]
    pub k_shot: usize,
    #[serde(default = "default_query_size")]
    pub query_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_episodes() -> u64 {
    15_000
}
fn default_task_batch() -> usize {
    16
}
fn default_meta_adam() -> AdamConfig {
    AdamConfig::with_lr(5e-4)
}
fn default_n_way() -> usize {
    5
}
fn default_k_shot() -> usize {
    1
}
fn default_query_size() -> usize {
    50
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: default_episodes(),
            task_batch: default_task_batch(),
            optimizer: default_meta_adam(),
            n_way: default_n_way(),
            k_shot: default_k_shot(),
            query_size: default_query_size(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_batch == 0 || self.n_way == 0 || self.k_shot == 0 || self.query_size == 0 {
            return Err(Error::Config(
                "train.task_batch, n_way, k_shot and query_size must be positive".into(),
            ));
        }
        if !(self.optimizer.learning_rate >= 0.0) {
            return Err(Error::Config("train.optimizer.learning_rate must be >= 0".into()));
        }
        if self.query_size % self.n_way != 0 {
            return Err(Error::Config("train.query_size must be divisible by n_way".into()));
        }
        Ok(())
    }
}

pub struct MetaTrainReport {
    pub model: ModelState,
    /// One record per optimizer step.
    pub curve: Vec<CurveRecord>,
}

/// Runs `f` on a dedicated pool of `workers` threads (`0` = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    Ok(pool.install(f))
}

/// Loss and gradients of a batch of episodes, reduced in episode order.
///
/// Episodes are evaluated in parallel; the sum is always taken over
/// `indices` in ascending order, so the result does not depend on the
/// worker count.
pub fn batch_gradients(
    model: &ModelState,
    dataset: &MultimodalDataset,
    classes: &BTreeSet<String>,
    embedder: &TextEmbedder,
    config: &TrainConfig,
    indices: &[u64],
) -> Result<(f64, f64, ModelParams)> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let results: Vec<Result<_>> = sorted
        .par_iter()
        .map(|&idx| {
            let mut rng = episode_rng(config.seed, idx);
            let ep = sample_episode(dataset, classes, config.n_way, config.k_shot, config.query_size, &mut rng)?;
            let r = episode_loss_and_grads(model, &ep, embedder, model.variant)?;
            if !r.loss.is_finite() || !r.grads.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss or gradient in episode {idx} (seed {:#018x})",
                    episode_seed(config.seed, idx)
                )));
            }
            Ok(r)
        })
        .collect();
    let mut total = model.params.zeros_like();
    let (mut loss, mut acc) = (0.0, 0.0);
    for r in results {
        let r = r?;
        loss += r.loss;
        acc += r.accuracy;
        total.add_assign(&r.grads);
    }
    let n = sorted.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, acc / n, total))
}

/// Episodic training of the trainable groups with Adam. The encoder is
/// frozen regardless of the incoming flags.
pub fn meta_train(
    model: ModelState,
    dataset: &MultimodalDataset,
    classes: &BTreeSet<String>,
    embedder: &TextEmbedder,
    config: &TrainConfig,
    workers: usize,
) -> Result<MetaTrainReport> {
    config.validate()?;
    let mut model = model;
    model.trainable = Trainable::META;
    let trainable = model.trainable;
    let sizes: Vec<usize> = model
        .params
        .tensors()
        .iter()
        .filter(|t| trainable.contains(t.group))
        .map(|t| t.data.len())
        .collect();
    let mut adam = Adam::new(config.optimizer, &sizes);
    let mut curve = Vec::new();
    let mut next: u64 = 0;
    let mut step: u64 = 0;
    while next < config.episodes {
        let end = (next + config.task_batch as u64).min(config.episodes);
        let indices: Vec<u64> = (next..end).collect();
        let (loss, acc, grads) = with_workers(workers, || {
            batch_gradients(&model, dataset, classes, embedder, config, &indices)
        })??;
        step += 1;
        let grad_slices: Vec<&[f64]> = grads
            .tensors()
            .into_iter()
            .filter(|t| trainable.contains(t.group))
            .map(|t| t.data)
            .collect();
        let mut params: Vec<&mut [f64]> = model
            .params
            .tensors_mut()
            .into_iter()
            .filter(|t| trainable.contains(t.group))
            .map(|t| t.data)
            .collect();
        adam.update(&mut params, &grad_slices);
        curve.push(CurveRecord {
            step,
            mean_loss: loss,
            accuracy: acc,
        });
        next = end;
    }
    Ok(MetaTrainReport { model, curve })
}

/// Mean cross-entropy of the query labels for one episode.
pub fn episode_loss(model: &ModelState, episode: &Episode<'_>, embedder: &TextEmbedder) -> Result<f64> {
    let fwd = forward_episode(model, episode, embedder, model.variant)?;
    let (loss, _) = cross_entropy(&fwd.head.log_probs, &episode.query_labels());
    if !loss.is_finite() {
        return Err(Error::NonFinite("episode loss".into()));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub samples: usize,
    pub seed: u64,
    /// Pairs where both |analytic| and |numeric| are below this are skipped.
    pub skip_below: f64,
    /// Groups to sample coordinates from; `None` uses the model's trainable flags.
    pub groups: Option<Trainable>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            samples: 200,
            seed: 0,
            skip_below: 1e-8,
            groups: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateError {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst: Option<CoordinateError>,
}

/// Compares analytic gradients of [`episode_loss`] with central differences.
pub fn gradient_check(
    model: &ModelState,
    episode: &Episode<'_>,
    embedder: &TextEmbedder,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = episode_loss_and_grads(model, episode, embedder, model.variant)?.grads;
    gradient_check_against(model, episode, embedder, &analytic, options)
}

/// Like [`gradient_check`] but against caller-supplied gradients.
pub fn gradient_check_against(
    model: &ModelState,
    episode: &Episode<'_>,
    embedder: &TextEmbedder,
    analytic: &ModelParams,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let groups = options.groups.unwrap_or(model.trainable);
    let analytic_tensors = analytic.tensors();
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (k, t) in model.params.tensors().iter().enumerate() {
        if groups.contains(t.group) {
            coords.extend((0..t.data.len()).map(|i| (k, i)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let chosen: Vec<(usize, usize)> = if coords.len() <= options.samples {
        coords
    } else {
        coords.choose_multiple(&mut rng, options.samples).copied().collect()
    };

    let mut probe = model.clone();
    let h = options.step;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for (k, i) in chosen {
        let original = probe.params.tensors()[k].data[i];
        probe.params.tensors_mut()[k].data[i] = original + h;
        let plus = episode_loss(&probe, episode, embedder)?;
        probe.params.tensors_mut()[k].data[i] = original - h;
        let minus = episode_loss(&probe, episode, embedder)?;
        probe.params.tensors_mut()[k].data[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic_tensors[k].data[i];
        let scale = a.abs().max(numeric.abs());
        if scale < options.skip_below {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let rel = (a - numeric).abs() / scale;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            if report.worst.as_ref().is_none_or(|w| rel >= w.relative_error) {
                report.worst = Some(CoordinateError {
                    tensor: analytic_tensors[k].name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    relative_error: rel,
                });
            }
        }
    }
    Ok(report)
}
