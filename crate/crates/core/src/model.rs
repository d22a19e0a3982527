//! The full model `f = (g, Ψ, h)`: parameters, ablation variants, and the
//! episode-level forward and backward passes.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{cross_entropy, head_backward, head_forward, AttentionParams, ClassifierConfig, HeadForward, Inference};
use crate::conditioner::{
    class_embedding, class_embedding_backward, embed_texts, generate_film, generate_film_backward,
    task_embedding, task_embedding_backward, video_support_encodings, video_support_encodings_backward,
    ConditionerConfig, ConditionerKind, ConditionerParams, FilmTrace, TaskEncoder, TextEmbedder,
};
use crate::encoder::{encode_backward, encode_batch, EncoderConfig, EncoderParams, EncoderTrace, FilmParams};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::nn::Linear;

/// Model family used in the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Text-conditioned, transductive.
    Tnt,
    /// Text-conditioned, inductive.
    Tni,
    /// Video-conditioned, transductive.
    Vnt,
    /// Video-conditioned, inductive.
    Vni,
    /// No conditioning, support-mean prototypes.
    InductiveBaseline,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::InductiveBaseline,
        Variant::Vni,
        Variant::Tni,
        Variant::Vnt,
        Variant::Tnt,
    ];

    pub fn conditioner(self) -> Option<ConditionerKind> {
        match self {
            Variant::Tnt | Variant::Tni => Some(ConditionerKind::Text),
            Variant::Vnt | Variant::Vni => Some(ConditionerKind::Video),
            Variant::InductiveBaseline => None,
        }
    }

    pub fn inference(self) -> Inference {
        match self {
            Variant::Tnt | Variant::Vnt => Inference::Transductive,
            _ => Inference::Inductive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tnt => "TNT",
            Variant::Tni => "TNI",
            Variant::Vnt => "VNT",
            Variant::Vni => "VNI",
            Variant::InductiveBaseline => "inductive-baseline",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tnt" => Ok(Variant::Tnt),
            "tni" => Ok(Variant::Tni),
            "vnt" => Ok(Variant::Vnt),
            "vni" => Ok(Variant::Vni),
            "inductive_baseline" | "baseline" => Ok(Variant::InductiveBaseline),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub conditioner: Option<ConditionerConfig>,
    pub classifier: ClassifierConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if let Some(c) = &self.conditioner {
            c.validate()?;
        }
        self.classifier.validate()
    }
}

/// Parameter group used for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Conditioner,
    Attention,
}

/// All trainable tensors. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub conditioner: Option<ConditionerParams>,
    pub attention: AttentionParams,
}

/// Read-only view of one named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable view of one named tensor.
pub struct TensorMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            encoder: self.encoder.zeros_like(),
            conditioner: self.conditioner.as_ref().map(ConditionerParams::zeros_like),
            attention: AttentionParams::zeros(self.attention.dim()),
        }
    }

    /// Every tensor in a fixed, documented order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        fn lin<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, group: ParamGroup, l: &'a Linear) {
            out.push(TensorRef {
                name: format!("{prefix}.weight"),
                group,
                shape: l.weight.shape().to_vec(),
                data: l.weight.as_slice().expect("standard layout"),
            });
            out.push(TensorRef {
                name: format!("{prefix}.bias"),
                group,
                shape: l.bias.shape().to_vec(),
                data: l.bias.as_slice().expect("standard layout"),
            });
        }
        fn enc<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, group: ParamGroup, e: &'a EncoderParams) {
            for (i, st) in e.stages.iter().enumerate() {
                lin(out, &format!("{prefix}.stage{i}"), group, st);
            }
            lin(out, &format!("{prefix}.projection"), group, &e.projection);
        }
        enc(&mut out, "encoder", ParamGroup::Encoder, &self.encoder);
        if let Some(c) = &self.conditioner {
            let g = ParamGroup::Conditioner;
            match &c.task_encoder {
                TaskEncoder::Text { class_proj, task_proj } => {
                    lin(&mut out, "conditioner.class_proj", g, class_proj);
                    lin(&mut out, "conditioner.task_proj", g, task_proj);
                }
                TaskEncoder::Video { stack, class_proj } => {
                    enc(&mut out, "conditioner.video", g, stack);
                    lin(&mut out, "conditioner.class_proj", g, class_proj);
                }
            }
            lin(&mut out, "conditioner.film.hidden", g, &c.film_generator.hidden);
            lin(&mut out, "conditioner.film.output", g, &c.film_generator.output);
        }
        for (name, m) in [("attention.w_q", &self.attention.w_q), ("attention.w_k", &self.attention.w_k)] {
            out.push(TensorRef {
                name: name.to_string(),
                group: ParamGroup::Attention,
                shape: m.shape().to_vec(),
                data: m.as_slice().expect("standard layout"),
            });
        }
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        fn lin<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, group: ParamGroup, l: &'a mut Linear) {
            out.push(TensorMut {
                name: format!("{prefix}.weight"),
                group,
                shape: l.weight.shape().to_vec(),
                data: l.weight.as_slice_mut().expect("standard layout"),
            });
            out.push(TensorMut {
                name: format!("{prefix}.bias"),
                group,
                shape: l.bias.shape().to_vec(),
                data: l.bias.as_slice_mut().expect("standard layout"),
            });
        }
        fn enc<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, group: ParamGroup, e: &'a mut EncoderParams) {
            for (i, st) in e.stages.iter_mut().enumerate() {
                lin(out, &format!("{prefix}.stage{i}"), group, st);
            }
            lin(out, &format!("{prefix}.projection"), group, &mut e.projection);
        }
        enc(&mut out, "encoder", ParamGroup::Encoder, &mut self.encoder);
        if let Some(c) = &mut self.conditioner {
            let g = ParamGroup::Conditioner;
            match &mut c.task_encoder {
                TaskEncoder::Text { class_proj, task_proj } => {
                    lin(&mut out, "conditioner.class_proj", g, class_proj);
                    lin(&mut out, "conditioner.task_proj", g, task_proj);
                }
                TaskEncoder::Video { stack, class_proj } => {
                    enc(&mut out, "conditioner.video", g, stack);
                    lin(&mut out, "conditioner.class_proj", g, class_proj);
                }
            }
            lin(&mut out, "conditioner.film.hidden", g, &mut c.film_generator.hidden);
            lin(&mut out, "conditioner.film.output", g, &mut c.film_generator.output);
        }
        let AttentionParams { w_q, w_k } = &mut self.attention;
        for (name, m) in [("attention.w_q", w_q), ("attention.w_k", w_k)] {
            out.push(TensorMut {
                name: name.to_string(),
                group: ParamGroup::Attention,
                shape: m.shape().to_vec(),
                data: m.as_slice_mut().expect("standard layout"),
            });
        }
        out
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Which parameter groups the optimizer may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub encoder: bool,
    pub conditioner: bool,
    pub attention: bool,
}

impl Trainable {
    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Conditioner => self.conditioner,
            ParamGroup::Attention => self.attention,
        }
    }

    /// Backbone pretraining: encoder only.
    pub const BACKBONE: Trainable = Trainable {
        encoder: true,
        conditioner: false,
        attention: false,
    };

    /// Meta-training: encoder frozen.
    pub const META: Trainable = Trainable {
        encoder: false,
        conditioner: true,
        attention: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub variant: Variant,
    pub params: ModelParams,
    pub trainable: Trainable,
}

impl ModelState {
    /// Randomly initialized model for `variant`. The conditioner section of
    /// `config` must match the variant's conditioning modality.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, variant: Variant, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let kind = variant.conditioner();
        let conditioner_kind = config.conditioner.as_ref().map(|c| c.kind);
        if kind.is_some() && kind != conditioner_kind {
            return Err(Error::Config(format!(
                "variant {variant} needs a {:?} conditioner, config has {:?}",
                kind.unwrap(),
                conditioner_kind
            )));
        }
        let encoder = EncoderParams::init(&config.encoder, rng)?;
        let conditioner = match (&config.conditioner, kind) {
            (Some(c), Some(_)) => Some(ConditionerParams::init(c, &config.encoder, rng)?),
            _ => None,
        };
        let attention = AttentionParams::init(config.encoder.output_dim, rng);
        let config = ModelConfig {
            conditioner: if conditioner.is_some() { config.conditioner } else { None },
            ..config
        };
        Ok(ModelState {
            config,
            variant,
            params: ModelParams {
                encoder,
                conditioner,
                attention,
            },
            trainable: Trainable::META,
        })
    }

    /// Checks that `variant` can run on this model's parameters.
    pub fn supports(&self, variant: Variant) -> Result<()> {
        match (variant.conditioner(), self.params.conditioner.as_ref()) {
            (None, _) => Ok(()),
            (Some(k), Some(c)) if c.kind() == k => Ok(()),
            (Some(k), c) => Err(Error::Config(format!(
                "variant {variant} needs a {k:?} conditioner, model has {:?}",
                c.map(ConditionerParams::kind)
            ))),
        }
    }
}

enum ConditioningTrace {
    None,
    Text {
        embeddings: Array2<f64>,
        film: FilmTrace,
    },
    Video {
        encodings: Array2<f64>,
        trace: EncoderTrace,
        film: FilmTrace,
    },
}

/// Forward pass of one episode, with everything needed for backprop.
pub struct EpisodeForward {
    pub head: HeadForward,
    pub film: FilmParams,
    pub e_class: Option<Array2<f64>>,
    pub e_task: Option<Array1<f64>>,
    /// Support embeddings (`NK × G`) followed by query embeddings (`B × G`).
    pub embeddings: Array2<f64>,
    pub variant: Variant,
    support_labels: Vec<usize>,
    n_support: usize,
    encoder_trace: EncoderTrace,
    conditioning: ConditioningTrace,
}

impl EpisodeForward {
    pub fn support_embeddings(&self) -> ndarray::ArrayView2<'_, f64> {
        self.embeddings.slice(s![..self.n_support, ..])
    }

    pub fn query_embeddings(&self) -> ndarray::ArrayView2<'_, f64> {
        self.embeddings.slice(s![self.n_support.., ..])
    }

    /// `B × N` class probabilities.
    pub fn probabilities(&self) -> Array2<f64> {
        self.head.probabilities()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.head
            .logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

/// Runs the whole pipeline on one episode:
/// texts → conditioner → FiLM → encoder → attention/prototypes → distances.
pub fn forward_episode(
    model: &ModelState,
    episode: &Episode<'_>,
    embedder: &TextEmbedder,
    variant: Variant,
) -> Result<EpisodeForward> {
    model.supports(variant)?;
    let p = &model.params;
    let enc_cfg = &model.config.encoder;
    let n_way = episode.n_way;
    let support_labels = episode.support_labels();
    let support_videos: Vec<&Array2<f64>> = episode.support.iter().map(|(i, _)| &i.frames).collect();

    let (film, e_class, e_task, conditioning) = match (variant.conditioner(), &p.conditioner) {
        (None, _) => (FilmParams::identity(&enc_cfg.stage_dims), None, None, ConditioningTrace::None),
        (Some(_), Some(cond)) => match &cond.task_encoder {
            TaskEncoder::Text { class_proj, task_proj } => {
                let texts: Vec<&str> = episode.support.iter().map(|(i, _)| i.text.as_str()).collect();
                let embeddings = embed_texts(&texts, embedder)?;
                let e_task = task_embedding(&embeddings, task_proj)?;
                let e_class = class_embedding(&embeddings, &support_labels, n_way, class_proj)?;
                let (film, film_trace) = generate_film(&e_task, &cond.film_generator, enc_cfg)?;
                (
                    film,
                    Some(e_class),
                    Some(e_task),
                    ConditioningTrace::Text {
                        embeddings,
                        film: film_trace,
                    },
                )
            }
            TaskEncoder::Video { stack, class_proj } => {
                let (encodings, trace) = video_support_encodings(&support_videos, stack)?;
                let e_task = encodings.mean_axis(Axis(0)).expect("non-empty support");
                let e_class = class_embedding(&encodings, &support_labels, n_way, class_proj)?;
                let (film, film_trace) = generate_film(&e_task, &cond.film_generator, enc_cfg)?;
                (
                    film,
                    Some(e_class),
                    Some(e_task),
                    ConditioningTrace::Video {
                        encodings,
                        trace,
                        film: film_trace,
                    },
                )
            }
        },
        (Some(_), None) => unreachable!("checked by supports()"),
    };

    let mut videos = support_videos;
    videos.extend(episode.query.iter().map(|(i, _)| &i.frames));
    let (embeddings, encoder_trace) = encode_batch(&videos, &p.encoder, &film)?;
    let n_support = episode.support.len();
    let v_support = embeddings.slice(s![..n_support, ..]).to_owned();
    let v_query = embeddings.slice(s![n_support.., ..]).to_owned();
    let head = head_forward(
        e_class.as_ref(),
        &v_query,
        &v_support,
        &support_labels,
        n_way,
        &p.attention,
        &model.config.classifier,
        variant.inference(),
    )?;
    Ok(EpisodeForward {
        head,
        film,
        e_class,
        e_task,
        embeddings,
        variant,
        support_labels,
        n_support,
        encoder_trace,
        conditioning,
    })
}

/// Gradients of `grad_logits` (`B × N`) with respect to every parameter.
pub fn backward_episode(model: &ModelState, fwd: &EpisodeForward, grad_logits: &Array2<f64>) -> ModelParams {
    let p = &model.params;
    let mut grads = p.zeros_like();
    let head = head_backward(&fwd.head, &p.attention, grad_logits);
    grads.attention = head.attention;

    let d_emb = concatenate![Axis(0), head.v_support.view(), head.v_query.view()];
    let (enc_grads, film_grads) = encode_backward(&fwd.encoder_trace, &p.encoder, &fwd.film, &d_emb);
    grads.encoder = enc_grads;

    if let (Some(cond), Some(gcond)) = (&p.conditioner, grads.conditioner.as_mut()) {
        let n_way = fwd.head.relevance.n_way();
        let d_e_class = head.e_class.unwrap_or_else(|| Array2::zeros((n_way, model.config.encoder.output_dim)));
        match (&fwd.conditioning, &cond.task_encoder, &mut gcond.task_encoder) {
            (ConditioningTrace::None, _, _) => {}
            (
                ConditioningTrace::Text { embeddings, film },
                TaskEncoder::Text { class_proj, task_proj },
                TaskEncoder::Text {
                    class_proj: g_class,
                    task_proj: g_task,
                },
            ) => {
                let d_task = generate_film_backward(film, &cond.film_generator, &film_grads, &mut gcond.film_generator);
                task_embedding_backward(embeddings, task_proj, &d_task, g_task);
                class_embedding_backward(embeddings, &fwd.support_labels, class_proj, &d_e_class, g_class);
            }
            (
                ConditioningTrace::Video { encodings, trace, film },
                TaskEncoder::Video { stack, class_proj },
                TaskEncoder::Video {
                    stack: g_stack,
                    class_proj: g_class,
                },
            ) => {
                let d_task = generate_film_backward(film, &cond.film_generator, &film_grads, &mut gcond.film_generator);
                let n = encodings.nrows() as f64;
                let mut d_enc = class_embedding_backward(encodings, &fwd.support_labels, class_proj, &d_e_class, g_class);
                d_enc += &(&d_task / n);
                *g_stack = video_support_encodings_backward(trace, stack, &d_enc);
            }
            _ => unreachable!("trace matches parameters"),
        }
    }
    grads
}

/// Loss, gradients and query accuracy of one episode.
pub struct EpisodeResult {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: ModelParams,
}

pub fn episode_loss_and_grads(
    model: &ModelState,
    episode: &Episode<'_>,
    embedder: &TextEmbedder,
    variant: Variant,
) -> Result<EpisodeResult> {
    let fwd = forward_episode(model, episode, embedder, variant)?;
    let labels = episode.query_labels();
    let (loss, grad_logits) = cross_entropy(&fwd.head.log_probs, &labels);
    let accuracy = accuracy(&fwd.predictions(), &labels);
    let grads = backward_episode(model, &fwd, &grad_logits);
    Ok(EpisodeResult { loss, accuracy, grads })
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}
