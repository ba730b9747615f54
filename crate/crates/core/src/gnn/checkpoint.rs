//! Binary model container: magic, version, JSON header, threshold, tensors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};

const MAGIC: &[u8; 8] = b"STVDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub threshold: f64,
    /// Free-form extras (vocabulary, encoder settings, training config).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_rows: Option<usize>,
    meta: serde_json::Value,
}

fn err(m: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(m.into())
}

pub fn write_checkpoint(mut w: impl Write, ck: &Checkpoint) -> Result<(), ModelError> {
    let header = Header {
        config: ck.config.clone(),
        vocab_rows: ck.params.token_table.as_ref().map(|t| t.nrows()),
        meta: ck.meta.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&ck.threshold.to_le_bytes())?;
    let tensors = ck.params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in &shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ModelError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| err(format!("truncated file: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint, ModelError> {
    if &take::<8>(&mut r)? != MAGIC {
        return Err(err("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut r)?) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|e| err(format!("truncated header: {e}")))?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| err(format!("bad header: {e}")))?;
    let threshold = f64::from_le_bytes(take(&mut r)?);

    // Build the expected structure, then fill it block by block.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut params = ModelParams::init(&header.config, header.vocab_rows, &mut rng)?;
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    if count != expected.len() {
        return Err(err(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut slots = params.tensors_mut();
    for (i, (name, shape)) in expected.iter().enumerate() {
        let name_len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut got = vec![0u8; name_len];
        r.read_exact(&mut got).map_err(|e| err(e.to_string()))?;
        if got != name.as_bytes() {
            return Err(err(format!("tensor {i}: expected {name}, found {}", String::from_utf8_lossy(&got))));
        }
        let ndim = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(take(&mut r)?) as usize);
        }
        if &dims != shape {
            return Err(err(format!("{name}: expected shape {shape:?}, found {dims:?}")));
        }
        for v in slots[i].1.iter_mut() {
            *v = f64::from_le_bytes(take(&mut r)?);
        }
    }
    drop(slots);
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(err(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { config: header.config, params, threshold, meta: header.meta })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
