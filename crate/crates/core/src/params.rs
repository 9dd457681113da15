//! Named parameter storage, seeded initialization, and the binary
//! checkpoint container.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Shape;
use crate::corpus::fnv1a;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OPGC";
const VERSION: u32 = 1;

/// Weights are drawn uniformly from this symmetric range.
pub const WEIGHT_INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Shape,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

/// Name → tensor map. Iteration order is the lexicographic name order, which
/// keeps optimizer sweeps and checkpoints stable.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: &str, shape: Shape, value: Vec<f64>) -> Result<()> {
        if value.len() != shape.len() {
            return Err(Error::contract(format!(
                "parameter '{name}': {} values cannot fill {shape}",
                value.len()
            )));
        }
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name '{name}'")));
        }
        let grad = vec![0.0; value.len()];
        self.params.insert(
            name.to_string(),
            Param { shape, value, grad, trainable: true },
        );
        Ok(())
    }

    /// Weight matrix drawn uniformly from ±`WEIGHT_INIT_RANGE`, keyed by both
    /// the run seed and the parameter name so every tensor gets its own
    /// stream regardless of creation order.
    pub fn init_matrix(&mut self, name: &str, rows: usize, cols: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
        let value = (0..rows * cols)
            .map(|_| rng.random_range(-WEIGHT_INIT_RANGE..WEIGHT_INIT_RANGE))
            .collect();
        self.insert(name, Shape::Matrix(rows, cols), value)
    }

    pub fn init_vector(&mut self, name: &str, n: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
        let value = (0..n)
            .map(|_| rng.random_range(-WEIGHT_INIT_RANGE..WEIGHT_INIT_RANGE))
            .collect();
        self.insert(name, Shape::Vector(n), value)
    }

    /// Bias vectors start at zero.
    pub fn zeros_vector(&mut self, name: &str, n: usize) -> Result<()> {
        self.insert(name, Shape::Vector(n), vec![0.0; n])
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Multiply every gradient accumulator by `k` (e.g. 1/batch to turn a
    /// sum of per-example gradients into a mean).
    pub fn scale_grads(&mut self, k: f64) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: serde_json::Value,
    vocab: Vec<String>,
    params: Vec<ParamHeader>,
}

fn shape_to_dims(shape: Shape) -> Vec<usize> {
    match shape {
        Shape::Vector(n) => vec![n],
        Shape::Matrix(r, c) => vec![r, c],
    }
}

fn dims_to_shape(dims: &[usize], name: &str) -> Result<Shape> {
    match dims {
        [n] => Ok(Shape::Vector(*n)),
        [r, c] => Ok(Shape::Matrix(*r, *c)),
        other => Err(Error::Checkpoint(format!(
            "parameter '{name}' has unsupported rank {}",
            other.len()
        ))),
    }
}

/// Write a checkpoint: magic, version, JSON header (config, vocabulary,
/// parameter directory), then one little-endian double blob.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &serde_json::Value,
    vocab: &[String],
    params: &ParameterSet,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    let mut headers = Vec::new();
    let mut offset = 0u64;
    for (name, p) in params.iter() {
        headers.push(ParamHeader {
            name: name.clone(),
            shape: shape_to_dims(p.shape),
            offset,
            len: p.value.len() as u64,
            trainable: p.trainable,
        });
        offset += p.value.len() as u64;
    }
    let header = CheckpointHeader {
        config: config.clone(),
        vocab: vocab.to_vec(),
        params: headers,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encoding failed: {e}")))?;

    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&header_bytes).map_err(|e| Error::io(path, e))?;
    for (_, p) in params.iter() {
        for v in &p.value {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a checkpoint back; values round-trip bit exactly.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(serde_json::Value, Vec<String>, ParameterSet)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("header decoding failed: {e}")))?;

    let mut blob = Vec::new();
    r.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint("value blob is not a whole number of doubles".into()));
    }
    let doubles: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut params = ParameterSet::new();
    for ph in &header.params {
        let shape = dims_to_shape(&ph.shape, &ph.name)?;
        let start = ph.offset as usize;
        let end = start + ph.len as usize;
        if end > doubles.len() || shape.len() != ph.len as usize {
            return Err(Error::Checkpoint(format!(
                "parameter '{}' directory entry does not fit the value blob",
                ph.name
            )));
        }
        params.insert(&ph.name, shape, doubles[start..end].to_vec())?;
        params.get_mut(&ph.name)?.trainable = ph.trainable;
    }
    Ok((header.config, header.vocab, params))
}
