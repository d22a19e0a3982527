//! Multimodal instances, synthetic dataset generation, and the line-delimited
//! dataset file format.
//!
//! A dataset file is UTF-8 JSON lines. The first line is a header
//! `{"format_version":1,"frame_count":T,"frame_dim":D}` and every following
//! line is one instance
//! `{"instance_id":..,"class_id":..,"text":..,"frames":[[..D reals..] × T]}`.
//! Reals are written in shortest round-trip form, so loading a saved dataset
//! reproduces it bit for bit.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// One video (as a `T × D_in` frame-feature matrix), its description and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalInstance {
    pub instance_id: String,
    pub class_id: String,
    pub frames: Array2<f64>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    instances: Vec<MultimodalInstance>,
    classes: BTreeSet<String>,
    by_class: BTreeMap<String, Vec<usize>>,
    frame_count: usize,
    frame_dim: usize,
}

impl MultimodalDataset {
    /// Validates and indexes a list of instances sharing `frame_count × frame_dim`.
    pub fn new(
        frame_count: usize,
        frame_dim: usize,
        instances: Vec<MultimodalInstance>,
    ) -> Result<Self> {
        if frame_count == 0 || frame_dim == 0 {
            return Err(Error::InvalidData(format!(
                "frame_count and frame_dim must be positive, got {frame_count} and {frame_dim}"
            )));
        }
        let mut seen = HashSet::new();
        let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, inst) in instances.iter().enumerate() {
            if inst.frames.dim() != (frame_count, frame_dim) {
                return Err(Error::DimensionMismatch {
                    instance: inst.instance_id.clone(),
                    message: format!(
                        "frames are {}x{}, dataset expects {frame_count}x{frame_dim}",
                        inst.frames.nrows(),
                        inst.frames.ncols()
                    ),
                });
            }
            if inst.frames.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "frames of instance `{}`",
                    inst.instance_id
                )));
            }
            if inst.text.trim().is_empty() {
                return Err(Error::InvalidData(format!(
                    "instance `{}` has an empty text",
                    inst.instance_id
                )));
            }
            if !seen.insert(inst.instance_id.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate instance id `{}`",
                    inst.instance_id
                )));
            }
            by_class.entry(inst.class_id.clone()).or_default().push(idx);
        }
        let classes = by_class.keys().cloned().collect();
        Ok(MultimodalDataset {
            instances,
            classes,
            by_class,
            frame_count,
            frame_dim,
        })
    }

    pub fn instances(&self) -> &[MultimodalInstance] {
        &self.instances
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }

    /// Indices (into [`instances`](Self::instances)) of every instance of `class_id`.
    pub fn class_members(&self, class_id: &str) -> &[usize] {
        self.by_class.get(class_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Parameters of the synthetic generator.
///
/// Every class is named by a two-word verb phrase drawn from a shared
/// vocabulary, and its latent direction is the sum of the latent vectors of
/// those two words. Novel classes are therefore new combinations of words
/// seen during training, which is what lets a text embedding transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub instances_per_class: usize,
    pub frame_count: usize,
    pub frame_dim: usize,
    pub latent_dim: usize,
    pub n_object_variants: usize,
    pub noise_scale: f64,
    pub text_informativeness: f64,
    pub seed: u64,
    /// Standard deviation of the per-object latent offsets.
    #[serde(default = "default_object_scale")]
    pub object_scale: f64,
    /// Amplitude of the per-instance temporal drift, relative to `noise_scale`.
    #[serde(default = "default_drift_scale")]
    pub drift_scale: f64,
    /// Standard deviation of a per-class latent component that the class
    /// words do not describe.
    #[serde(default)]
    pub class_residual_scale: f64,
}

fn default_object_scale() -> f64 {
    1.0
}

fn default_drift_scale() -> f64 {
    1.0
}

/// The default benchmark: noisy frames, several visual modes per class, and
/// class names that only partly determine appearance.
impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 100,
            instances_per_class: 30,
            frame_count: 8,
            frame_dim: 32,
            latent_dim: 16,
            n_object_variants: 12,
            noise_scale: 3.5,
            text_informativeness: 1.0,
            seed: 2021,
            object_scale: 1.5,
            drift_scale: default_drift_scale(),
            class_residual_scale: 0.6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("instances_per_class", self.instances_per_class),
            ("frame_count", self.frame_count),
            ("frame_dim", self.frame_dim),
            ("latent_dim", self.latent_dim),
            ("n_object_variants", self.n_object_variants),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("synthetic.{name} must be positive")));
            }
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config("synthetic.noise_scale must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.text_informativeness) {
            return Err(Error::Config(
                "synthetic.text_informativeness must lie in [0, 1]".into(),
            ));
        }
        if !(self.object_scale >= 0.0) || !(self.drift_scale >= 0.0) || !(self.class_residual_scale >= 0.0) {
            return Err(Error::Config(
                "synthetic.object_scale, drift_scale and class_residual_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

const VERBS: &[&str] = &[
    "put", "take", "open", "close", "push", "pull", "turn", "lift", "drop", "move", "pour",
    "wash", "cut", "shake", "throw", "roll",
];

const PARTICLES: &[&str] = &[
    "down", "up", "away", "over", "into", "onto", "off", "across", "around", "back", "apart",
    "together",
];

const NOUNS: &[&str] = &[
    "plate", "aubergine", "pan", "cup", "knife", "bottle", "lid", "towel", "spoon", "bowl",
    "box", "paper", "phone", "book", "bag", "jar", "fork", "glass", "pot", "sponge", "onion",
    "carrot", "tray", "kettle",
];

fn vocabulary(base: &[&str], count: usize, stem: &str) -> Vec<String> {
    (0..count)
        .map(|i| match base.get(i) {
            Some(w) => (*w).to_string(),
            None => format!("{stem}{i}"),
        })
        .collect()
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(dim, || {
        let e: f64 = StandardNormal.sample(rng);
        scale * e
    })
}

/// Generates a synthetic dataset. Bit-deterministic for a fixed spec.
///
/// Frame `t` of an instance of class `c` with object `o` is
/// `M (z_c + u_o + (2t/(T-1) - 1) a·d) + ε_t`, where `M` is a fixed random
/// `D_in × latent` mixing matrix, `d` a random unit direction per instance,
/// `a = noise_scale · drift_scale`, and `ε_t ~ N(0, noise_scale²)`. The class
/// direction `z_c` is the sum of its two word latents and a residual of scale
/// `class_residual_scale`.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<MultimodalDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latent = spec.latent_dim;

    let n_verbs = VERBS.len();
    let n_particles = PARTICLES.len().max(spec.n_classes.div_ceil(n_verbs));
    let verbs = vocabulary(VERBS, n_verbs, "verb");
    let particles = vocabulary(PARTICLES, n_particles, "way");
    let nouns = vocabulary(NOUNS, spec.n_object_variants, "object");

    // Each word contributes half the variance of a class direction.
    let word_scale = (0.5f64).sqrt();
    let verb_latents: Vec<_> = (0..n_verbs)
        .map(|_| gaussian_vec(&mut rng, latent, word_scale))
        .collect();
    let particle_latents: Vec<_> = (0..n_particles)
        .map(|_| gaussian_vec(&mut rng, latent, word_scale))
        .collect();
    let object_offsets: Vec<_> = (0..spec.n_object_variants)
        .map(|_| gaussian_vec(&mut rng, latent, spec.object_scale))
        .collect();
    let mixing = Array2::from_shape_simple_fn((latent, spec.frame_dim), || {
        StandardNormal.sample(&mut rng)
    }) / (latent as f64).sqrt();

    let mut combos: Vec<(usize, usize)> = (0..n_verbs)
        .flat_map(|v| (0..n_particles).map(move |p| (v, p)))
        .collect();
    combos.shuffle(&mut rng);
    combos.truncate(spec.n_classes);

    // Separate stream so the residuals leave every other draw unchanged.
    let mut residual_rng = ChaCha8Rng::seed_from_u64(crate::episodes::splitmix64(spec.seed ^ 0x5eed_c1a5));
    let residuals: Vec<_> = (0..combos.len())
        .map(|_| gaussian_vec(&mut residual_rng, latent, spec.class_residual_scale))
        .collect();

    let frames_n = spec.frame_count;
    let drift_amp = spec.noise_scale * spec.drift_scale;
    let mut instances = Vec::with_capacity(spec.n_classes * spec.instances_per_class);
    for (&(v, p), residual) in combos.iter().zip(&residuals) {
        let class_id = format!("{}_{}", verbs[v], particles[p]);
        let z = &verb_latents[v] + &particle_latents[p] + residual;
        for k in 0..spec.instances_per_class {
            let object = rng.random_range(0..spec.n_object_variants);
            let informative = rng.random::<f64>() < spec.text_informativeness;
            let noun = if informative {
                object
            } else {
                rng.random_range(0..spec.n_object_variants)
            };
            let mut direction = gaussian_vec(&mut rng, latent, 1.0);
            let norm = direction.dot(&direction).sqrt();
            if norm > 0.0 {
                direction /= norm;
            }
            let base = &z + &object_offsets[object];
            let mut latent_frames = Array2::<f64>::zeros((frames_n, latent));
            for t in 0..frames_n {
                let ramp = if frames_n > 1 {
                    2.0 * t as f64 / (frames_n - 1) as f64 - 1.0
                } else {
                    0.0
                };
                let row = &base + &(&direction * (ramp * drift_amp));
                latent_frames.row_mut(t).assign(&row);
            }
            let mut frames = latent_frames.dot(&mixing);
            if spec.noise_scale > 0.0 {
                frames.mapv_inplace(|x| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x + spec.noise_scale * e
                });
            }
            instances.push(MultimodalInstance {
                instance_id: format!("{class_id}/{k:04}"),
                class_id: class_id.clone(),
                frames,
                text: format!("{} {} {}", verbs[v], particles[p], nouns[noun]),
            });
        }
    }
    MultimodalDataset::new(frames_n, spec.frame_dim, instances)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    frame_count: usize,
    frame_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    instance_id: String,
    class_id: String,
    text: String,
    frames: Vec<Vec<f64>>,
}

/// Writes `dataset` in the line-delimited format described in the module docs.
pub fn save_dataset(dataset: &MultimodalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format_version: FORMAT_VERSION,
        frame_count: dataset.frame_count,
        frame_dim: dataset.frame_dim,
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::io(path, e.into()))?;
    out.write_all(b"\n").map_err(io)?;
    for inst in &dataset.instances {
        let record = Record {
            instance_id: inst.instance_id.clone(),
            class_id: inst.class_id.clone(),
            text: inst.text.clone(),
            frames: inst.frames.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultimodalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, e.to_string()))?
        }
        None => return Err(parse_err(1, "missing header record".into())),
    };
    if header.format_version != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported format_version {}", header.format_version),
        ));
    }
    let mut instances = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let rows = record.frames.len();
        let cols = record.frames.first().map_or(0, Vec::len);
        if rows != header.frame_count || record.frames.iter().any(|r| r.len() != header.frame_dim)
        {
            return Err(Error::DimensionMismatch {
                instance: record.instance_id,
                message: format!(
                    "line {line_no}: frames are {rows}x{cols}, header declares {}x{}",
                    header.frame_count, header.frame_dim
                ),
            });
        }
        let flat: Vec<f64> = record.frames.into_iter().flatten().collect();
        let frames = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        instances.push(MultimodalInstance {
            instance_id: record.instance_id,
            class_id: record.class_id,
            frames,
            text: record.text,
        });
    }
    MultimodalDataset::new(header.frame_count, header.frame_dim, instances)
}
