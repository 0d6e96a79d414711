//! Versioned checkpoint files: a JSON header plus base64-encoded
//! little-endian f64 tensor blobs (bit-exact round trip).

use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::numerics::NdArray;

use super::params::{ModelConfig, ModelParams};
use super::ModelError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    d: usize,
    h: usize,
    layers: usize,
    p: usize,
    ff_mult: usize,
    vocab_size: usize,
    n_classes: usize,
    use_projection: bool,
    objective: String,
    tensors: Vec<TensorRecord>,
}

fn encode_tensor(t: &NdArray) -> String {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_tensor(rec: &TensorRecord) -> Result<NdArray, ModelError> {
    let bytes = B64
        .decode(&rec.data)
        .map_err(|e| ModelError::Checkpoint(format!("tensor {:?}: {e}", rec.name)))?;
    if bytes.len() != rec.rows * rec.cols * 8 {
        return Err(ModelError::Checkpoint(format!(
            "tensor {:?}: expected {} values, blob holds {}",
            rec.name,
            rec.rows * rec.cols,
            bytes.len() / 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(NdArray::new(vec![rec.rows, rec.cols], data)?)
}

/// Writes parameters with a header recording the architecture and the
/// pretraining objective.
pub fn save_checkpoint(
    params: &ModelParams,
    objective: &str,
    path: &Path,
) -> Result<(), ModelError> {
    let c = &params.config;
    let doc = CheckpointDoc {
        version: CHECKPOINT_VERSION,
        d: c.d,
        h: c.h,
        layers: c.layers,
        p: c.p,
        ff_mult: c.ff_mult,
        vocab_size: c.vocab_size,
        n_classes: c.n_classes,
        use_projection: c.use_projection,
        objective: objective.to_string(),
        tensors: params
            .named()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                rows: t.rows(),
                cols: t.cols(),
                data: encode_tensor(t),
            })
            .collect(),
    };
    let json = serde_json::to_string(&doc).expect("checkpoint serializes");
    std::fs::write(path, json).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a checkpoint; when `expected_vocab_size` is given it must
/// match the stored vocabulary size exactly.
pub fn load_checkpoint(
    path: &Path,
    expected_vocab_size: Option<usize>,
) -> Result<(ModelParams, String), ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "version {} unsupported (expected {CHECKPOINT_VERSION})",
            doc.version
        )));
    }
    if let Some(v) = expected_vocab_size {
        if v != doc.vocab_size {
            return Err(ModelError::Checkpoint(format!(
                "vocabulary size mismatch: checkpoint trained with {}, current vocabulary has {v}",
                doc.vocab_size
            )));
        }
    }
    let config = ModelConfig {
        d: doc.d,
        h: doc.h,
        layers: doc.layers,
        p: doc.p,
        ff_mult: doc.ff_mult,
        vocab_size: doc.vocab_size,
        n_classes: doc.n_classes,
        use_projection: doc.use_projection,
    };
    let mut params = ModelParams::init(config, 0)?;
    let mut blobs: HashMap<String, NdArray> = HashMap::with_capacity(doc.tensors.len());
    for rec in &doc.tensors {
        if blobs.insert(rec.name.clone(), decode_tensor(rec)?).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {:?}", rec.name)));
        }
    }
    let expected: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != blobs.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            blobs.len()
        )));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let tensor = blobs.remove(name).ok_or_else(|| {
            ModelError::Checkpoint(format!("missing tensor {name:?}"))
        })?;
        if tensor.shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                tensor.shape()
            )));
        }
        *slot = tensor;
    }
    Ok((params, doc.objective))
}
