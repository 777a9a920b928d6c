//! Binary checkpoints: magic, format version, JSON header, raw
//! little-endian tensors and a SHA-256 trailer over everything before it.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, AdamConfig, Moments, TrainConfig};
use crate::model::{build_discriminator, build_generator, Discriminator, Generator, GeneratorConfig};
use crate::nn::Module;
use crate::{Error, Result, Scalar};

const MAGIC: &[u8; 8] = b"SKGANOMY";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Everything needed to resume training or to score.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub opt_g: Adam<T>,
    pub opt_d: Adam<T>,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub train_config: TrainConfig,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    steps: u64,
    moments: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    epoch: usize,
    best_metric: Option<f64>,
    model: GeneratorConfig,
    train: TrainConfig,
    rng: ChaCha8Rng,
    opt_g: OptimizerHeader,
    opt_d: OptimizerHeader,
    tensors: Vec<TensorEntry>,
}

fn collect<T: Scalar>(prefix: &str, m: &dyn Module<T>, out: &mut Vec<(String, ArrayD<T>)>) {
    m.visit_tensors(prefix, &mut |name, _, t| out.push((name.to_string(), t.clone())));
}

fn optimizer_tensors<T: Scalar>(prefix: &str, opt: &Adam<T>, out: &mut Vec<(String, ArrayD<T>)>) -> OptimizerHeader {
    for m in &opt.moments {
        out.push((format!("{prefix}.{}.m", m.name), m.m.clone()));
        out.push((format!("{prefix}.{}.v", m.name), m.v.clone()));
    }
    OptimizerHeader {
        config: opt.config,
        steps: opt.steps,
        moments: opt.moments.iter().map(|m| m.name.clone()).collect(),
    }
}

/// Serialises a checkpoint to bytes.
pub fn encode_checkpoint<T: Scalar>(c: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    collect("generator", &c.generator, &mut tensors);
    collect("discriminator", &c.discriminator, &mut tensors);
    let opt_g = optimizer_tensors("opt_g", &c.opt_g, &mut tensors);
    let opt_d = optimizer_tensors("opt_d", &c.opt_d, &mut tensors);
    let header = Header {
        dtype: T::DTYPE.to_string(),
        epoch: c.epoch,
        best_metric: c.best_metric,
        model: c.generator.config().clone(),
        train: c.train_config.clone(),
        rng: c.rng.clone(),
        opt_g,
        opt_d,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for &v in t.iter() {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses bytes produced by [`encode_checkpoint`].
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }

    let mut r = Reader { bytes: body, pos: 12 };
    let header_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(Error::CorruptCheckpoint(format!(
            "checkpoint stores {} tensors, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }

    let mut tensors: HashMap<String, ArrayD<T>> = HashMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = r.take(n * T::BYTES)?;
        let values: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let t =
            ArrayD::from_shape_vec(IxDyn(&entry.shape), values).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        tensors.insert(entry.name.clone(), t);
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes after tensors".into()));
    }

    let mut generator = build_generator::<T>(&header.model, 0)?;
    let mut discriminator = build_discriminator::<T>(&header.model, 0)?;
    restore("generator", &mut generator, &mut tensors)?;
    restore("discriminator", &mut discriminator, &mut tensors)?;
    let opt_g = restore_optimizer("opt_g", header.opt_g, &mut tensors)?;
    let opt_d = restore_optimizer("opt_d", header.opt_d, &mut tensors)?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::CorruptCheckpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint {
        generator,
        discriminator,
        opt_g,
        opt_d,
        epoch: header.epoch,
        best_metric: header.best_metric,
        train_config: header.train,
        rng: header.rng,
    })
}

fn restore<T: Scalar>(prefix: &str, m: &mut dyn Module<T>, tensors: &mut HashMap<String, ArrayD<T>>) -> Result<()> {
    let mut failure = None;
    m.visit_tensors_mut(prefix, &mut |name, _, t| {
        if failure.is_some() {
            return;
        }
        match tensors.remove(name) {
            Some(v) if v.shape() == t.shape() => *t = v,
            Some(v) => {
                failure = Some(Error::CorruptCheckpoint(format!(
                    "{name} has shape {:?}, expected {:?}",
                    v.shape(),
                    t.shape()
                )))
            }
            None => failure = Some(Error::CorruptCheckpoint(format!("missing tensor {name}"))),
        }
    });
    failure.map_or(Ok(()), Err)
}

fn restore_optimizer<T: Scalar>(
    prefix: &str,
    header: OptimizerHeader,
    tensors: &mut HashMap<String, ArrayD<T>>,
) -> Result<Adam<T>> {
    let mut take = |key: String| {
        tensors
            .remove(&key)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {key}")))
    };
    let mut moments = Vec::with_capacity(header.moments.len());
    for name in header.moments {
        let m = take(format!("{prefix}.{name}.m"))?;
        let v = take(format!("{prefix}.{name}.v"))?;
        moments.push(Moments { name, m, v });
    }
    Ok(Adam {
        config: header.config,
        steps: header.steps,
        moments,
    })
}

pub fn save_checkpoint<T: Scalar>(c: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(c)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks that its architecture matches `expected`.
pub fn load_checkpoint_for<T: Scalar>(path: &Path, expected: &GeneratorConfig) -> Result<Checkpoint<T>> {
    let c = load_checkpoint::<T>(path)?;
    let found = c.generator.config();
    if found != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {found:?}, expected {expected:?}"
        )));
    }
    Ok(c)
}
