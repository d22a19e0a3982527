//! Model checkpoints.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! {"format": "tnt-checkpoint", "version": 1, "variant": "tnt",
//!  "trainable": {...}, "config": {...},
//!  "tensors": [{"name": "encoder.stage0.weight", "shape": [32, 64], "data": [...]}, ...]}
//! ```
//!
//! Tensor data is row-major and written in shortest round-trip form, so a
//! save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState, Trainable, Variant};

const FORMAT: &str = "tnt-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    variant: Variant,
    trainable: Trainable,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

pub fn save_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        variant: model.variant,
        trainable: model.trainable,
        config: model.config.clone(),
        tensors: model
            .params
            .tensors()
            .into_iter()
            .map(|t| TensorRecord {
                name: t.name,
                shape: t.shape,
                data: t.data.to_vec(),
            })
            .collect(),
    };
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(out);
    serde_json::to_writer(&mut out, &file).map_err(|e| Error::io(path, e.into()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let file: CheckpointFile =
        serde_json::from_reader(reader).map_err(|e| parse_err(e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(parse_err(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    // Shapes come from the config; values are overwritten below.
    let mut model = ModelState::init(file.config, file.variant, &mut ChaCha8Rng::seed_from_u64(0))?;
    model.trainable = file.trainable;
    let mut slots = model.params.tensors_mut();
    if slots.len() != file.tensors.len() {
        return Err(parse_err(format!(
            "checkpoint has {} tensors, model expects {}",
            file.tensors.len(),
            slots.len()
        )));
    }
    for (slot, rec) in slots.iter_mut().zip(&file.tensors) {
        if slot.name != rec.name || slot.shape != rec.shape || slot.data.len() != rec.data.len() {
            return Err(parse_err(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                rec.name, rec.shape, slot.name, slot.shape
            )));
        }
        slot.data.copy_from_slice(&rec.data);
    }
    drop(slots);
    Ok(model)
}
