//! Task conditioner: frozen text embedders, the class/task projections and the
//! FiLM generator, plus the video-based task encoder used in ablations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_backward, encode_batch, EncoderConfig, EncoderParams, EncoderTrace, FilmParams, FilmStage};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Linear};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Frozen sentence embedder.
#[derive(Debug, Clone, PartialEq)]
pub enum TextEmbedder {
    /// Hashed bag of words: token counts in `fnv1a64(token) mod dim` buckets,
    /// L2-normalized.
    Hashed { dim: usize },
    /// Exact-string table of precomputed vectors.
    Lookup {
        dim: usize,
        table: HashMap<String, Array1<f64>>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LookupRecord {
    text: String,
    vector: Vec<f64>,
}

impl TextEmbedder {
    pub fn hashed(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("hashed embedder dimension must be positive".into()));
        }
        Ok(TextEmbedder::Hashed { dim })
    }

    /// Reads a lookup file of JSON lines `{"text": .., "vector": [..]}`.
    pub fn load_lookup(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        let mut dim = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let rec: LookupRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if rec.vector.is_empty() || rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("vector must be non-empty and finite".into()));
            }
            match dim {
                None => dim = Some(rec.vector.len()),
                Some(d) if d != rec.vector.len() => {
                    return Err(parse_err(format!(
                        "vector has {} entries, earlier records have {d}",
                        rec.vector.len()
                    )))
                }
                _ => {}
            }
            if table.insert(rec.text.clone(), Array1::from(rec.vector)).is_some() {
                return Err(parse_err(format!("duplicate text {:?}", rec.text)));
            }
        }
        let dim = dim.ok_or_else(|| Error::InvalidData(format!("{} has no records", path.display())))?;
        Ok(TextEmbedder::Lookup { dim, table })
    }

    pub fn dim(&self) -> usize {
        match self {
            TextEmbedder::Hashed { dim } | TextEmbedder::Lookup { dim, .. } => *dim,
        }
    }

    pub fn embed(&self, text: &str) -> Result<Array1<f64>> {
        match self {
            TextEmbedder::Hashed { dim } => {
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    return Err(Error::EmptyText(text.to_string()));
                }
                let mut v = Array1::<f64>::zeros(*dim);
                for t in &tokens {
                    v[(fnv1a64(t.as_bytes()) % *dim as u64) as usize] += 1.0;
                }
                let norm = v.dot(&v).sqrt();
                Ok(v / norm)
            }
            TextEmbedder::Lookup { table, .. } => table
                .get(text)
                .cloned()
                .ok_or_else(|| Error::LookupMiss(text.to_string())),
        }
    }
}

/// Row `j` is the embedding of `texts[j]`.
pub fn embed_texts(texts: &[&str], embedder: &TextEmbedder) -> Result<Array2<f64>> {
    if texts.is_empty() {
        return Err(Error::Shape("no texts to embed".into()));
    }
    let mut out = Array2::zeros((texts.len(), embedder.dim()));
    for (j, t) in texts.iter().enumerate() {
        out.row_mut(j).assign(&embedder.embed(t)?);
    }
    Ok(out)
}

/// Which support modality drives the conditioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionerKind {
    Text,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionerConfig {
    pub kind: ConditionerKind,
    /// Width of the source embeddings (`D_text` for text conditioning).
    pub input_dim: usize,
    /// Task embedding width `L`.
    pub task_dim: usize,
    /// Hidden width of the FiLM generator.
    pub hidden_dim: usize,
    /// Stage widths of the video task encoder (video conditioning only).
    #[serde(default = "default_video_stages")]
    pub video_stage_dims: Vec<usize>,
}

fn default_video_stages() -> Vec<usize> {
    vec![32]
}

impl ConditionerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.task_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("conditioner dimensions must be positive".into()));
        }
        if self.kind == ConditionerKind::Video
            && (self.video_stage_dims.is_empty() || self.video_stage_dims.contains(&0))
        {
            return Err(Error::Config("video conditioner needs positive stage widths".into()));
        }
        Ok(())
    }
}

/// Source of the task and class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskEncoder {
    /// `class_proj: D_text → G`, `task_proj: D_text → L`.
    Text { class_proj: Linear, task_proj: Linear },
    /// Unmodulated stage stack `D_in → L` applied per support video, and
    /// `class_proj: L → G`.
    Video { stack: EncoderParams, class_proj: Linear },
}

/// `L → hidden → Σ 2·C_i`, emitting `(Δγ_i, β_i)` per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmGenerator {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionerParams {
    pub task_encoder: TaskEncoder,
    pub film_generator: FilmGenerator,
}

impl ConditionerParams {
    /// Random projections and a zero FiLM output layer, so the initial
    /// modulation is the identity.
    pub fn init<R: Rng + ?Sized>(
        config: &ConditionerConfig,
        encoder: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let g = encoder.output_dim;
        let l = config.task_dim;
        let task_encoder = match config.kind {
            ConditionerKind::Text => TaskEncoder::Text {
                class_proj: Linear::random(config.input_dim, g, 1.0, rng),
                task_proj: Linear::random(config.input_dim, l, 1.0, rng),
            },
            ConditionerKind::Video => {
                let mut stack_cfg =
                    EncoderConfig::new(encoder.input_dim, config.video_stage_dims.clone(), l);
                stack_cfg.norm = encoder.norm;
                stack_cfg.variance_floor = encoder.variance_floor;
                TaskEncoder::Video {
                    stack: EncoderParams::init(&stack_cfg, rng)?,
                    class_proj: Linear::random(l, g, 1.0, rng),
                }
            }
        };
        Ok(ConditionerParams {
            task_encoder,
            film_generator: FilmGenerator {
                hidden: Linear::random(l, config.hidden_dim, 2f64.sqrt(), rng),
                output: Linear::zeros(config.hidden_dim, encoder.film_size()),
            },
        })
    }

    pub fn zeros_like(&self) -> Self {
        let task_encoder = match &self.task_encoder {
            TaskEncoder::Text {
                class_proj,
                task_proj,
            } => TaskEncoder::Text {
                class_proj: class_proj.zeros_like(),
                task_proj: task_proj.zeros_like(),
            },
            TaskEncoder::Video { stack, class_proj } => TaskEncoder::Video {
                stack: stack.zeros_like(),
                class_proj: class_proj.zeros_like(),
            },
        };
        ConditionerParams {
            task_encoder,
            film_generator: FilmGenerator {
                hidden: self.film_generator.hidden.zeros_like(),
                output: self.film_generator.output.zeros_like(),
            },
        }
    }

    pub fn kind(&self) -> ConditionerKind {
        match self.task_encoder {
            TaskEncoder::Text { .. } => ConditionerKind::Text,
            TaskEncoder::Video { .. } => ConditionerKind::Video,
        }
    }
}

fn check_balanced(labels: &[usize], n_way: usize) -> Result<usize> {
    if n_way == 0 || labels.is_empty() || labels.len() % n_way != 0 {
        return Err(Error::Shape(format!(
            "{} support labels cannot split evenly into {n_way} classes",
            labels.len()
        )));
    }
    let k = labels.len() / n_way;
    let mut counts = vec![0usize; n_way];
    for &l in labels {
        if l >= n_way {
            return Err(Error::Shape(format!("label {l} out of range for {n_way}-way")));
        }
        counts[l] += 1;
    }
    if counts.iter().any(|&c| c != k) {
        return Err(Error::Shape(format!("unbalanced support labels: {counts:?}")));
    }
    Ok(k)
}

/// Projects each support embedding and averages the `K` rows of every class.
/// Row `i` of the result belongs to local label `i`.
pub fn class_embedding(
    embeddings: &Array2<f64>,
    labels: &[usize],
    n_way: usize,
    proj: &Linear,
) -> Result<Array2<f64>> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    check_projection(proj, embeddings.ncols())?;
    let k = check_balanced(labels, n_way)?;
    let projected = proj.forward(embeddings.view());
    let mut out = Array2::zeros((n_way, proj.output_dim()));
    for (row, &l) in projected.rows().into_iter().zip(labels) {
        let mut dst = out.row_mut(l);
        dst += &row;
    }
    out /= k as f64;
    Ok(out)
}

/// Gradient of [`class_embedding`]; accumulates into `grad_proj`, returns `dL/dE`.
pub fn class_embedding_backward(
    embeddings: &Array2<f64>,
    labels: &[usize],
    proj: &Linear,
    grad_out: &Array2<f64>,
    grad_proj: &mut Linear,
) -> Array2<f64> {
    let k = labels.len() / grad_out.nrows();
    let mut g_proj_out = Array2::zeros((labels.len(), grad_out.ncols()));
    for (j, &l) in labels.iter().enumerate() {
        g_proj_out.row_mut(j).assign(&grad_out.row(l).mapv(|v| v / k as f64));
    }
    proj.backward(embeddings.view(), g_proj_out.view(), grad_proj)
}

fn check_projection(proj: &Linear, input: usize) -> Result<()> {
    if proj.input_dim() != input {
        return Err(Error::Shape(format!(
            "projection expects {} inputs, embeddings have {input}",
            proj.input_dim()
        )));
    }
    Ok(())
}

/// Mean over all support rows of their projections.
pub fn task_embedding(embeddings: &Array2<f64>, proj: &Linear) -> Result<Array1<f64>> {
    if embeddings.nrows() == 0 {
        return Err(Error::Shape("task embedding of an empty support set".into()));
    }
    check_projection(proj, embeddings.ncols())?;
    Ok(proj
        .forward(embeddings.view())
        .mean_axis(Axis(0))
        .expect("non-empty"))
}

pub fn task_embedding_backward(
    embeddings: &Array2<f64>,
    proj: &Linear,
    grad_out: &Array1<f64>,
    grad_proj: &mut Linear,
) -> Array2<f64> {
    let n = embeddings.nrows();
    let g = grad_out.mapv(|v| v / n as f64);
    let g_rows = Array2::from_shape_fn((n, g.len()), |(_, c)| g[c]);
    proj.backward(embeddings.view(), g_rows.view(), grad_proj)
}

/// Intermediate values of [`generate_film`].
#[derive(Debug, Clone)]
pub struct FilmTrace {
    input: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

/// Maps the task embedding to per-stage `(γ_i, β_i)` with `γ_i = 1 + Δγ_i`.
pub fn generate_film(
    e_task: &Array1<f64>,
    generator: &FilmGenerator,
    encoder: &EncoderConfig,
) -> Result<(FilmParams, FilmTrace)> {
    if generator.hidden.input_dim() != e_task.len() {
        return Err(Error::Shape(format!(
            "FiLM generator expects L = {}, got {}",
            generator.hidden.input_dim(),
            e_task.len()
        )));
    }
    if generator.output.output_dim() != encoder.film_size() {
        return Err(Error::Shape(format!(
            "FiLM generator emits {} values, encoder needs {}",
            generator.output.output_dim(),
            encoder.film_size()
        )));
    }
    let input = e_task.view().insert_axis(Axis(0)).to_owned();
    let hidden_pre = generator.hidden.forward(input.view());
    let hidden = relu(&hidden_pre);
    let out = generator.output.forward(hidden.view());
    let out = out.row(0);
    let mut offset = 0;
    let mut stages = Vec::with_capacity(encoder.stage_dims.len());
    for &c in &encoder.stage_dims {
        let gamma = out.slice(ndarray::s![offset..offset + c]).mapv(|d| 1.0 + d);
        let beta = out.slice(ndarray::s![offset + c..offset + 2 * c]).to_owned();
        offset += 2 * c;
        stages.push(FilmStage { gamma, beta });
    }
    Ok((
        FilmParams { stages },
        FilmTrace {
            input,
            hidden_pre,
            hidden,
        },
    ))
}

/// Gradient of [`generate_film`]; accumulates into `grads`, returns `dL/de_task`.
pub fn generate_film_backward(
    trace: &FilmTrace,
    generator: &FilmGenerator,
    film_grads: &FilmParams,
    grads: &mut FilmGenerator,
) -> Array1<f64> {
    let flat: Vec<f64> = film_grads
        .stages
        .iter()
        .flat_map(|s| s.gamma.iter().chain(s.beta.iter()).copied())
        .collect();
    let g_out = Array2::from_shape_vec((1, flat.len()), flat).expect("flat film grad");
    let g_hidden = generator
        .output
        .backward(trace.hidden.view(), g_out.view(), &mut grads.output);
    let g_pre = relu_backward(&trace.hidden_pre, &g_hidden);
    let g_in = generator
        .hidden
        .backward(trace.input.view(), g_pre.view(), &mut grads.hidden);
    g_in.row(0).to_owned()
}

/// Per-video encodings of the unmodulated video task encoder (`n × L`).
pub fn video_support_encodings(
    videos: &[&Array2<f64>],
    stack: &EncoderParams,
) -> Result<(Array2<f64>, EncoderTrace)> {
    let film = FilmParams::identity(&stack.config.stage_dims);
    encode_batch(videos, stack, &film)
}

/// Backward of [`video_support_encodings`]; returns stack gradients.
pub fn video_support_encodings_backward(
    trace: &EncoderTrace,
    stack: &EncoderParams,
    grad_out: &Array2<f64>,
) -> EncoderParams {
    let film = FilmParams::identity(&stack.config.stage_dims);
    encode_backward(trace, stack, &film, grad_out).0
}

/// Task embedding from support videos: the mean of their video task encodings.
pub fn video_task_embedding(videos: &[&Array2<f64>], stack: &EncoderParams) -> Result<Array1<f64>> {
    if videos.is_empty() {
        return Err(Error::Shape("video task embedding of an empty support set".into()));
    }
    let (enc, _) = video_support_encodings(videos, stack)?;
    Ok(enc.mean_axis(Axis(0)).expect("non-empty"))
}
