//! Task-conditioned video encoder.
//!
//! A video is a `T × D_in` matrix of frame features. Each stage applies
//! `affine → standardize → FiLM → ReLU` frame-wise; the last stage output is
//! mean-pooled over time and projected to the embedding size `G`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, standardize, standardize_backward, Linear, NormScope, Standardized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub stage_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub norm: NormScope,
    #[serde(default = "default_variance_floor")]
    pub variance_floor: f64,
}

fn default_variance_floor() -> f64 {
    1e-5
}

impl EncoderConfig {
    pub fn new(input_dim: usize, stage_dims: Vec<usize>, output_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            stage_dims,
            output_dim,
            norm: NormScope::default(),
            variance_floor: default_variance_floor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_dims.is_empty() {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.stage_dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config("encoder.variance_floor must be positive".into()));
        }
        Ok(())
    }

    /// Total number of FiLM coefficients, `Σ 2·C_i`.
    pub fn film_size(&self) -> usize {
        2 * self.stage_dims.iter().sum::<usize>()
    }
}

/// Trainable encoder weights. Also used to hold gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub stages: Vec<Linear>,
    pub projection: Linear,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut prev = config.input_dim;
        let mut stages = Vec::with_capacity(config.stage_dims.len());
        for &c in &config.stage_dims {
            stages.push(Linear::random(prev, c, 1.0, rng));
            prev = c;
        }
        let projection = Linear::random(prev, config.output_dim, 1.0, rng);
        Ok(EncoderParams {
            config: config.clone(),
            stages,
            projection,
        })
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            config: self.config.clone(),
            stages: self.stages.iter().map(Linear::zeros_like).collect(),
            projection: self.projection.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmStage {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Per-stage FiLM coefficients `{γ_i, β_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmParams {
    pub stages: Vec<FilmStage>,
}

impl FilmParams {
    /// γ = 1, β = 0 for every stage.
    pub fn identity(stage_dims: &[usize]) -> Self {
        FilmParams {
            stages: stage_dims
                .iter()
                .map(|&c| FilmStage {
                    gamma: Array1::ones(c),
                    beta: Array1::zeros(c),
                })
                .collect(),
        }
    }

    pub fn zeros(stage_dims: &[usize]) -> Self {
        FilmParams {
            stages: stage_dims
                .iter()
                .map(|&c| FilmStage {
                    gamma: Array1::zeros(c),
                    beta: Array1::zeros(c),
                })
                .collect(),
        }
    }

    fn check(&self, stage_dims: &[usize]) -> Result<()> {
        if self.stages.len() != stage_dims.len() {
            return Err(Error::Shape(format!(
                "FiLM has {} stages, encoder has {}",
                self.stages.len(),
                stage_dims.len()
            )));
        }
        for (i, (s, &c)) in self.stages.iter().zip(stage_dims).enumerate() {
            if s.gamma.len() != c || s.beta.len() != c {
                return Err(Error::Shape(format!(
                    "stage {i}: FiLM lengths ({}, {}) but stage width {c}",
                    s.gamma.len(),
                    s.beta.len()
                )));
            }
        }
        Ok(())
    }
}

/// `out[t, c] = γ[c] · x[t, c] + β[c]`.
pub fn film(features: ArrayView2<'_, f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Result<Array2<f64>> {
    let c = features.ncols();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "FiLM over {c} features with γ of length {} and β of length {}",
            gamma.len(),
            beta.len()
        )));
    }
    let mut out = &features * gamma;
    out += beta;
    Ok(out)
}

#[derive(Debug, Clone)]
struct StageTrace {
    input: Array2<f64>,
    normalized: Standardized,
    modulated: Array2<f64>,
}

/// Intermediate values of a batched forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    frames: usize,
    stages: Vec<StageTrace>,
    pooled: Array2<f64>,
}

/// Encodes a single video to a `G`-vector.
pub fn encode_video(video: &Array2<f64>, params: &EncoderParams, film: &FilmParams) -> Result<Array1<f64>> {
    let (emb, _) = encode_batch(&[video], params, film)?;
    Ok(emb.row(0).to_owned())
}

/// Encodes several videos sharing `T` with the same FiLM coefficients.
/// Returns the `n × G` embeddings and the trace for [`encode_backward`].
pub fn encode_batch(
    videos: &[&Array2<f64>],
    params: &EncoderParams,
    film_params: &FilmParams,
) -> Result<(Array2<f64>, EncoderTrace)> {
    let cfg = &params.config;
    film_params.check(&cfg.stage_dims)?;
    let n = videos.len();
    if n == 0 {
        return Err(Error::Shape("no videos to encode".into()));
    }
    let frames = videos[0].nrows();
    if frames == 0 {
        return Err(Error::Shape("videos need at least one frame".into()));
    }
    let mut x = Array2::<f64>::zeros((n * frames, cfg.input_dim));
    for (v, video) in videos.iter().enumerate() {
        if video.dim() != (frames, cfg.input_dim) {
            return Err(Error::Shape(format!(
                "stage 0 input: video {v} is {}x{}, expected {frames}x{}",
                video.nrows(),
                video.ncols(),
                cfg.input_dim
            )));
        }
        x.slice_mut(ndarray::s![v * frames..(v + 1) * frames, ..])
            .assign(video);
    }

    let mut traces = Vec::with_capacity(params.stages.len());
    for (stage, fs) in params.stages.iter().zip(&film_params.stages) {
        let affine = stage.forward(x.view());
        let normalized = standardize(&affine, cfg.norm, frames, cfg.variance_floor);
        let modulated = film(normalized.output.view(), &fs.gamma, &fs.beta)?;
        let out = relu(&modulated);
        traces.push(StageTrace {
            input: x,
            normalized,
            modulated,
        });
        x = out;
    }

    let width = x.ncols();
    let pooled = x
        .into_shape_with_order((n, frames, width))
        .map_err(|e| Error::Internal(e.to_string()))?
        .mean_axis(Axis(1))
        .expect("frames > 0");
    let embeddings = params.projection.forward(pooled.view());
    Ok((
        embeddings,
        EncoderTrace {
            frames,
            stages: traces,
            pooled,
        },
    ))
}

/// Backpropagates `grad_embeddings` (`n × G`) through a batched forward pass.
/// Returns gradients for the encoder weights and for the FiLM coefficients.
pub fn encode_backward(
    trace: &EncoderTrace,
    params: &EncoderParams,
    film_params: &FilmParams,
    grad_embeddings: &Array2<f64>,
) -> (EncoderParams, FilmParams) {
    let cfg = &params.config;
    let mut grads = params.zeros_like();
    let mut film_grads = FilmParams::zeros(&cfg.stage_dims);
    let frames = trace.frames;

    let grad_pooled = params
        .projection
        .backward(trace.pooled.view(), grad_embeddings.view(), &mut grads.projection);
    let n = grad_pooled.nrows();
    let width = grad_pooled.ncols();
    let mut grad = Array2::<f64>::zeros((n * frames, width));
    let scale = 1.0 / frames as f64;
    for v in 0..n {
        let g = grad_pooled.row(v).mapv(|x| x * scale);
        for t in 0..frames {
            grad.row_mut(v * frames + t).assign(&g);
        }
    }

    for s in (0..params.stages.len()).rev() {
        let st = &trace.stages[s];
        let g_mod = relu_backward(&st.modulated, &grad);
        let fs = &film_params.stages[s];
        let fg = &mut film_grads.stages[s];
        fg.gamma += &(&g_mod * &st.normalized.output).sum_axis(Axis(0));
        fg.beta += &g_mod.sum_axis(Axis(0));
        let g_norm = &g_mod * &fs.gamma;
        let g_affine = standardize_backward(&st.normalized, &g_norm, cfg.norm, frames);
        grad = params.stages[s].backward(st.input.view(), g_affine.view(), &mut grads.stages[s]);
    }
    (grads, film_grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn film_identity_and_constant_cases() {
        let x = array![[2.0, -1.0], [0.5, 4.0]];
        let id = film(x.view(), &array![1.0, 1.0], &array![0.0, 0.0]).unwrap();
        assert_eq!(id, x);
        let b = array![3.0, -7.0];
        let flat = film(x.view(), &array![0.0, 0.0], &b).unwrap();
        for row in flat.rows() {
            assert_eq!(row, b);
        }
        let one = film(array![[2.0, -1.0]].view(), &array![3.0, 0.5], &array![1.0, 0.0]).unwrap();
        assert_eq!(one, array![[7.0, -0.5]]);
    }

    #[test]
    fn film_rejects_mismatched_lengths() {
        let x = array![[1.0, 2.0, 3.0]];
        assert!(matches!(
            film(x.view(), &array![1.0, 1.0], &array![0.0, 0.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn constant_frames_pool_to_single_frame_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = EncoderConfig::new(3, vec![4, 5], 2);
        let params = EncoderParams::init(&cfg, &mut rng).unwrap();
        let film = FilmParams::identity(&cfg.stage_dims);
        let frame = array![[0.3, -1.2, 2.0]];
        let repeated = Array2::from_shape_fn((6, 3), |(_, j)| frame[[0, j]]);
        let a = encode_video(&frame, &params, &film).unwrap();
        let b = encode_video(&repeated, &params, &film).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_the_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = EncoderConfig::new(3, vec![4, 5], 2);
        let params = EncoderParams::init(&cfg, &mut rng).unwrap();
        let mut film = FilmParams::identity(&cfg.stage_dims);
        film.stages[1].beta = Array1::zeros(4);
        let err = encode_video(&Array2::zeros((2, 3)), &params, &film).unwrap_err();
        assert!(err.to_string().contains("stage 1"), "{err}");
        let film = FilmParams::identity(&cfg.stage_dims);
        let err = encode_video(&Array2::zeros((2, 4)), &params, &film).unwrap_err();
        assert!(err.to_string().contains("stage 0"), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::new(3, vec![], 2).validate().is_err());
        assert!(EncoderConfig::new(3, vec![0], 2).validate().is_err());
        assert_eq!(EncoderConfig::new(3, vec![4, 6], 2).film_size(), 20);
    }
}
