//! Episode-level evaluation with 95% confidence intervals, the ablation grid
//! and the query-size sweep.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioner::TextEmbedder;
use crate::datagen::MultimodalDataset;
use crate::episodes::{episode_rng, sample_episode};
use crate::error::{Error, Result};
use crate::model::{accuracy, forward_episode, ModelState, Variant};
use crate::trainer::with_workers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,
    pub n_episodes: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 {
            return Err(Error::Config("eval.n_episodes must be at least 1".into()));
        }
        if self.n_way == 0 || self.k_shot == 0 || self.query_size == 0 {
            return Err(Error::Config("eval n_way, k_shot and query_size must be positive".into()));
        }
        if self.query_size % self.n_way != 0 {
            return Err(Error::Config(format!(
                "eval query_size {} is not divisible by n_way {}",
                self.query_size, self.n_way
            )));
        }
        Ok(())
    }
}

/// Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub n_episodes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_episode: Vec<f64>,
    pub protocol: EvalProtocol,
}

impl MetricsReport {
    pub fn from_accuracies(accuracies: Vec<f64>, protocol: EvalProtocol) -> Self {
        let (mean_accuracy, ci95) = mean_and_ci95(&accuracies);
        MetricsReport {
            mean_accuracy,
            ci95,
            n_episodes: accuracies.len(),
            per_episode: accuracies,
            protocol,
        }
    }

    /// Drops the per-episode accuracies.
    pub fn summary(&self) -> Self {
        MetricsReport {
            per_episode: Vec::new(),
            ..self.clone()
        }
    }
}

/// Mean and `1.96 · sd / √n` of per-episode accuracies, both in percent.
/// `sd` uses the `n − 1` denominator; a single episode has a zero interval.
pub fn mean_and_ci95(accuracies: &[f64]) -> (f64, f64) {
    let n = accuracies.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let pct: Vec<f64> = accuracies.iter().map(|a| 100.0 * a).collect();
    let mean = pct.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = pct.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Accuracy of one episode, fully determined by `(protocol.seed, index)`.
pub fn episode_accuracy(
    model: &ModelState,
    dataset: &MultimodalDataset,
    classes: &BTreeSet<String>,
    embedder: &TextEmbedder,
    protocol: &EvalProtocol,
    index: u64,
) -> Result<f64> {
    let mut rng = episode_rng(protocol.seed, index);
    let ep = sample_episode(
        dataset,
        classes,
        protocol.n_way,
        protocol.k_shot,
        protocol.query_size,
        &mut rng,
    )?;
    let fwd = forward_episode(model, &ep, embedder, protocol.variant)?;
    Ok(accuracy(&fwd.predictions(), &ep.query_labels()))
}

/// Mean episode accuracy over `protocol.n_episodes` episodes drawn from `classes`.
pub fn evaluate(
    model: &ModelState,
    dataset: &MultimodalDataset,
    classes: &BTreeSet<String>,
    embedder: &TextEmbedder,
    protocol: &EvalProtocol,
    workers: usize,
) -> Result<MetricsReport> {
    protocol.validate()?;
    model.supports(protocol.variant)?;
    let accs: Vec<Result<f64>> = with_workers(workers, || {
        (0..protocol.n_episodes as u64)
            .into_par_iter()
            .map(|i| episode_accuracy(model, dataset, classes, embedder, protocol, i))
            .collect()
    })?;
    let accs = accs.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(MetricsReport::from_accuracies(accs, protocol.clone()))
}

/// Evaluates each model under its own variant on the same episode seeds.
pub fn ablate(
    models: &[&ModelState],
    dataset: &MultimodalDataset,
    classes: &BTreeSet<String>,
    embedder: &TextEmbedder,
    protocol: &EvalProtocol,
    workers: usize,
) -> Result<Vec<MetricsReport>> {
    models
        .iter()
        .map(|m| {
            let p = EvalProtocol {
                variant: m.variant,
                ..protocol.clone()
            };
            evaluate(m, dataset, classes, embedder, &p, workers)
        })
        .collect()
}

/// Evaluates at each query-set size with the protocol's base seed.
pub fn query_size_sweep(
    model: &ModelState,
    dataset: &MultimodalDataset,
    classes: &BTreeSet<String>,
    embedder: &TextEmbedder,
    query_sizes: &[usize],
    protocol: &EvalProtocol,
    workers: usize,
) -> Result<Vec<(usize, MetricsReport)>> {
    query_sizes
        .iter()
        .map(|&b| {
            let p = EvalProtocol {
                query_size: b,
                ..protocol.clone()
            };
            Ok((b, evaluate(model, dataset, classes, embedder, &p, workers)?))
        })
        .collect()
}

/// Plain-text table of reports, one row each.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>5} {:>6} {:>5} {:>9} {:>16}",
        "variant", "way", "shot", "B", "episodes", "accuracy (%)"
    );
    for r in reports {
        let p = &r.protocol;
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>6} {:>5} {:>9} {:>8.2} ± {:<5.2}",
            p.variant.name(),
            p.n_way,
            p.k_shot,
            p.query_size,
            r.n_episodes,
            r.mean_accuracy,
            r.ci95
        );
    }
    out
}
