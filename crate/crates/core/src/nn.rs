//! Small dense building blocks shared by the encoder, the conditioner and the
//! classifier: affine maps, standardization, softmax and the Adam optimizer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Affine map `y = x W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(input)`, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (input as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Linear {
            weight: Array2::from_shape_simple_fn((input, output), || normal.sample(rng)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        grad_out: ArrayView2<'_, f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        grad.weight += &x.t().dot(&grad_out);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.input_dim(), self.output_dim())
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of `relu` given its input `pre`.
pub fn relu_backward(pre: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut g = grad_out.clone();
    ndarray::Zip::from(&mut g).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

/// Which axis standardization statistics are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Each frame is standardized across its features.
    #[default]
    Features,
    /// Each feature is standardized across the frames of one video.
    Time,
}

/// Output of a standardization pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub output: Array2<f64>,
    /// One reciprocal standard deviation per normalized group, in the
    /// iteration order of the groups.
    inv_std: Vec<f64>,
}

/// Standardizes `x` (rows = frames of consecutive videos of `frames` rows each).
///
/// `Features` normalizes every row; `Time` normalizes every column inside each
/// block of `frames` rows. Variance is the biased estimate plus `floor`.
pub fn standardize(x: &Array2<f64>, scope: NormScope, frames: usize, floor: f64) -> Standardized {
    let mut out = x.clone();
    let mut inv_std = Vec::new();
    match scope {
        NormScope::Features => {
            for mut row in out.rows_mut() {
                inv_std.push(standardize_lane(row.as_slice_mut().expect("row-major"), floor));
            }
        }
        NormScope::Time => {
            let cols = x.ncols();
            let mut buf = vec![0.0; frames];
            for block in 0..x.nrows() / frames {
                for c in 0..cols {
                    for t in 0..frames {
                        buf[t] = out[[block * frames + t, c]];
                    }
                    inv_std.push(standardize_lane(&mut buf, floor));
                    for t in 0..frames {
                        out[[block * frames + t, c]] = buf[t];
                    }
                }
            }
        }
    }
    Standardized {
        output: out,
        inv_std,
    }
}

fn standardize_lane(lane: &mut [f64], floor: f64) -> f64 {
    let n = lane.len() as f64;
    let mean = lane.iter().sum::<f64>() / n;
    let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + floor).sqrt();
    for v in lane.iter_mut() {
        *v = (*v - mean) * inv;
    }
    inv
}

fn standardize_lane_backward(y: &[f64], gy: &mut [f64], inv_std: f64) {
    let n = y.len() as f64;
    let mean_g = gy.iter().sum::<f64>() / n;
    let mean_gy = y.iter().zip(gy.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
    for (g, &yv) in gy.iter_mut().zip(y) {
        *g = inv_std * (*g - mean_g - yv * mean_gy);
    }
}

/// Gradient of [`standardize`] with respect to its input.
pub fn standardize_backward(
    std: &Standardized,
    grad_out: &Array2<f64>,
    scope: NormScope,
    frames: usize,
) -> Array2<f64> {
    let mut g = grad_out.clone();
    let y = &std.output;
    match scope {
        NormScope::Features => {
            for (i, (mut grow, yrow)) in g.rows_mut().into_iter().zip(y.rows()).enumerate() {
                standardize_lane_backward(
                    yrow.as_slice().expect("row-major"),
                    grow.as_slice_mut().expect("row-major"),
                    std.inv_std[i],
                );
            }
        }
        NormScope::Time => {
            let cols = y.ncols();
            let mut yb = vec![0.0; frames];
            let mut gb = vec![0.0; frames];
            let mut k = 0;
            for block in 0..y.nrows() / frames {
                for c in 0..cols {
                    for t in 0..frames {
                        yb[t] = y[[block * frames + t, c]];
                        gb[t] = g[[block * frames + t, c]];
                    }
                    standardize_lane_backward(&yb, &mut gb, std.inv_std[k]);
                    k += 1;
                    for t in 0..frames {
                        g[[block * frames + t, c]] = gb[t];
                    }
                }
            }
        }
    }
    g
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Backward of a row-wise softmax: `dX = P ∘ (dP − rowsum(dP ∘ P))`.
pub fn softmax_rows_backward(probs: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut g = grad_out * probs;
    for (mut grow, prow) in g.rows_mut().into_iter().zip(probs.rows()) {
        let s = grow.sum();
        grow.zip_mut_with(&prow, |gv, &p| *gv -= s * p);
    }
    g
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

/// Adam with bias correction over a fixed list of flat tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `params[i]` and `grads[i]` must have the sizes the
    /// optimizer was created with.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
