//! Report ingestion, tokenization, vocabulary, and embedding tables.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved vocabulary entries, always occupying the lowest ids.
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NO_CONCEPT: usize = 4;

pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<no_concept>"];

/// The sentinel token emitted when no ontology concept matched.
pub const NO_CONCEPT_TOKEN: &str = "<no_concept>";

/// Lowercasing tokenizer: contiguous alphanumeric runs are single tokens,
/// decimal numbers like "0.06" stay intact, and every other non-whitespace
/// character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let mut run = String::new();
            while i < chars.len() {
                let c = chars[i];
                if c.is_alphanumeric() {
                    run.extend(c.to_lowercase());
                    i += 1;
                } else if c == '.'
                    && i + 1 < chars.len()
                    && chars[i - 1].is_ascii_digit()
                    && chars[i + 1].is_ascii_digit()
                {
                    // keep decimal points inside numbers ("0.06" is one token)
                    run.push('.');
                    i += 1;
                } else {
                    break;
                }
            }
            tokens.push(run);
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

/// A findings/impression pair; the unit of training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub id: String,
    pub findings_text: String,
    /// Absent for inference-only inputs.
    pub impression_text: Option<String>,
    pub findings_tokens: Vec<String>,
    pub impression_tokens: Vec<String>,
}

impl Report {
    pub fn new(id: impl Into<String>, findings: impl Into<String>, impression: Option<String>) -> Self {
        let findings_text = findings.into();
        let findings_tokens = tokenize(&findings_text);
        let impression_tokens = impression.as_deref().map(tokenize).unwrap_or_default();
        Report {
            id: id.into(),
            findings_text,
            impression_text: impression,
            findings_tokens,
            impression_tokens,
        }
    }

    pub fn has_impression(&self) -> bool {
        self.impression_text.is_some()
    }
}

#[derive(Serialize, Deserialize)]
struct ReportRecord {
    id: String,
    findings: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    impression: Option<String>,
}

/// Read a line-delimited dataset file (one JSON record per line with keys
/// "id", "findings", and optional "impression").
pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<Report>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reports = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReportRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, lineno + 1, e.to_string()))?;
        reports.push(Report::new(rec.id, rec.findings, rec.impression));
    }
    Ok(reports)
}

pub fn write_reports(path: impl AsRef<Path>, reports: &[Report]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in reports {
        let rec = ReportRecord {
            id: r.id.clone(),
            findings: r.findings_text.clone(),
            impression: r.impression_text.clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Bijective token/id mapping with reserved entries at the lowest ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    pub min_frequency: usize,
    pub max_size: usize,
}

impl Vocabulary {
    /// Build a vocabulary from an explicit token list (reserved tokens are
    /// prepended automatically; the list must not contain them).
    pub fn from_tokens<I, S>(tokens: I, min_frequency: usize, max_size: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        for t in tokens {
            let t = t.into();
            if !RESERVED_TOKENS.contains(&t.as_str()) {
                id_to_token.push(t);
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
            min_frequency,
            max_size,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Map a token to its id; unknown tokens map to UNK.
    pub fn id_of(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_of(t)).collect()
    }
}

/// Count tokens in findings and impressions, keep those at or above
/// `min_frequency` ranked by frequency then lexicographically, truncate the
/// whole table (reserved entries included) to `max_size`.
pub fn build_vocabulary(
    reports: &[Report],
    min_frequency: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    if reports.is_empty() {
        return Err(Error::config("reports", "cannot build a vocabulary from an empty collection"));
    }
    if max_size < RESERVED_TOKENS.len() {
        return Err(Error::config(
            "max_size",
            format!("must be at least {} to hold the reserved tokens", RESERVED_TOKENS.len()),
        ));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in reports {
        for t in r.findings_tokens.iter().chain(r.impression_tokens.iter()) {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_frequency)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED_TOKENS.len());
    Ok(Vocabulary::from_tokens(
        ranked.into_iter().map(|(t, _)| t.to_string()),
        min_frequency,
        max_size,
    ))
}

/// One dense vector per vocabulary id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dimension: usize,
    /// Row-major, `vocab.len() * dimension` values.
    pub vectors: Vec<f64>,
    pub trainable: bool,
    /// Fraction of the vocabulary found in the loaded file.
    pub coverage: f64,
}

impl EmbeddingTable {
    pub fn row(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dimension..(id + 1) * self.dimension]
    }

    /// Table with every row drawn from the fixed-seed fallback distribution;
    /// used when no pretrained vector file is supplied.
    pub fn seeded(vocab: &Vocabulary, dimension: usize) -> Self {
        let mut vectors = Vec::with_capacity(vocab.len() * dimension);
        for token in vocab.tokens() {
            vectors.extend(seeded_uniform_row(EMBEDDING_INIT_SEED, token, dimension, 0.1));
        }
        EmbeddingTable {
            dimension,
            vectors,
            trainable: true,
            coverage: 0.0,
        }
    }
}

fn seeded_uniform_row(seed: u64, token: &str, dim: usize, bound: f64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ fnv1a(token.as_bytes()));
    (0..dim).map(|_| rng.random_range(-bound..bound)).collect()
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub const EMBEDDING_INIT_SEED: u64 = 0x0e17_bedd;

/// Load a plain-text word-vector file (token followed by D decimals per
/// line). Vocabulary tokens absent from the file get a fixed-seed uniform
/// init in [-0.1, 0.1].
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim: Option<usize> = None;
    let mut loaded: HashMap<String, Vec<f64>> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| Error::format(path, lineno + 1, "empty record"))?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::format(path, lineno + 1, format!("bad value '{f}': {e}")))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => {
                if values.is_empty() {
                    return Err(Error::format(path, lineno + 1, "no vector values"));
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(Error::format(
                    path,
                    lineno + 1,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            _ => {}
        }
        loaded.insert(token.to_string(), values);
    }
    let dim = dim.ok_or_else(|| Error::format(path, 1, "empty embedding file"))?;
    let mut vectors = Vec::with_capacity(vocab.len() * dim);
    let mut found = 0usize;
    for token in vocab.tokens() {
        match loaded.get(token) {
            Some(v) => {
                found += 1;
                vectors.extend_from_slice(v);
            }
            None => vectors.extend(seeded_uniform_row(EMBEDDING_INIT_SEED, token, dim, 0.1)),
        }
    }
    Ok(EmbeddingTable {
        dimension: dim,
        vectors,
        trainable: true,
        coverage: found as f64 / vocab.len() as f64,
    })
}

/// Per-example vocabulary extension assigning temporary ids to source
/// out-of-vocabulary tokens so they can be copied and scored.
#[derive(Debug, Clone)]
pub struct ExtendedVocabulary {
    base_len: usize,
    oov_tokens: Vec<String>,
    /// Extended id of every source position.
    pub source_ext_ids: Vec<usize>,
}

impl ExtendedVocabulary {
    pub fn from_source(vocab: &Vocabulary, source_tokens: &[String]) -> Self {
        let mut oov_tokens: Vec<String> = Vec::new();
        let mut source_ext_ids = Vec::with_capacity(source_tokens.len());
        for t in source_tokens {
            let id = vocab.id_of(t);
            if id != UNK || vocab.contains(t) {
                source_ext_ids.push(id);
            } else {
                let ext = match oov_tokens.iter().position(|o| o == t) {
                    Some(k) => vocab.len() + k,
                    None => {
                        oov_tokens.push(t.clone());
                        vocab.len() + oov_tokens.len() - 1
                    }
                };
                source_ext_ids.push(ext);
            }
        }
        ExtendedVocabulary {
            base_len: vocab.len(),
            oov_tokens,
            source_ext_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.base_len + self.oov_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn n_oov(&self) -> usize {
        self.oov_tokens.len()
    }

    /// Extended id for a token: base id when known, temporary id when it is a
    /// source OOV, otherwise UNK.
    pub fn id_of(&self, vocab: &Vocabulary, token: &str) -> usize {
        if vocab.contains(token) {
            vocab.id_of(token)
        } else {
            self.oov_tokens
                .iter()
                .position(|o| o == token)
                .map(|k| self.base_len + k)
                .unwrap_or(UNK)
        }
    }

    pub fn token_of<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> Option<&'a str> {
        if id < self.base_len {
            vocab.token_of(id)
        } else {
            self.oov_tokens.get(id - self.base_len).map(|s| s.as_str())
        }
    }

    /// Clamp an extended id back into the base vocabulary (OOVs become UNK);
    /// used when a copied token is fed back into the decoder.
    pub fn to_base(&self, id: usize) -> usize {
        if id < self.base_len {
            id
        } else {
            UNK
        }
    }
}
