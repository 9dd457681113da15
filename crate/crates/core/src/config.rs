//! Application configuration: a flat `key = value` file merged with
//! command-line overrides (overrides win), resolved into one typed struct
//! that every subcommand prints before doing work.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::{MatcherKind, ModelConfig};
use crate::training::TrainConfig;

/// Every tunable the pipeline exposes, with defaults matching the reference
/// setup. `seed` stays optional because only training demands one.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    // model
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub dec_hidden: usize,
    pub findings_cap: usize,
    pub impression_cap: usize,
    pub dropout: f64,
    /// When false the concept pathway is removed entirely (plain
    /// pointer-generator ablation).
    pub ontology_enabled: bool,
    // concept matching
    pub matcher: MatcherKind,
    pub min_depth: usize,
    pub jaccard: f64,
    pub window: usize,
    // vocabulary
    pub vocab_min_frequency: usize,
    pub vocab_max_size: usize,
    // optimization
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub patience: usize,
    // decoding
    pub beam: usize,
    pub max_len: usize,
    pub length_normalize: bool,
    pub block_trigrams: bool,
    // extractive baselines
    pub top_k: usize,
    // run identity and file locations
    pub seed: Option<u64>,
    pub ontology_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let d = DecodeConfig::default();
        AppConfig {
            embed_dim: m.embed_dim,
            enc_hidden: m.enc_hidden,
            enc_layers: m.enc_layers,
            dec_hidden: m.dec_hidden,
            findings_cap: m.findings_cap,
            impression_cap: m.impression_cap,
            dropout: m.dropout,
            ontology_enabled: m.ontology,
            matcher: m.matcher,
            min_depth: m.min_depth,
            jaccard: m.jaccard,
            window: m.window,
            vocab_min_frequency: 2,
            vocab_max_size: 50_000,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            clip_norm: t.clip_norm,
            patience: t.patience,
            beam: d.beam,
            max_len: d.max_len,
            length_normalize: d.length_normalize,
            block_trigrams: d.block_trigrams,
            top_k: 3,
            seed: None,
            ontology_path: None,
            checkpoint: None,
            embeddings: None,
        }
    }
}

/// Command-line values that take precedence over the config file. `None`
/// means "not given on the command line".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ontology_path: Option<PathBuf>,
    pub matcher: Option<MatcherKind>,
    pub min_depth: Option<usize>,
    pub jaccard: Option<f64>,
    pub window: Option<usize>,
    pub beam: Option<usize>,
    pub max_len: Option<usize>,
    pub top_k: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub plain: bool,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("'{value}' is not {expected}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("'{value}' is not a boolean (true/false)"))),
    }
}

impl AppConfig {
    /// Defaults, then the optional config file, then command-line overrides.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<AppConfig> {
        let mut cfg = AppConfig::default();
        if let Some(path) = file {
            cfg.load_file(path)?;
        }
        cfg.apply_overrides(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::format(
                    path,
                    lineno + 1,
                    format!("expected 'key = value', got '{line}'"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::format(path, lineno + 1, format!("duplicate key '{key}'")));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Apply one `key = value` pair. Keys mirror the struct fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "embed_dim" => self.embed_dim = parse_value(key, value, "a positive integer")?,
            "enc_hidden" => self.enc_hidden = parse_value(key, value, "a positive integer")?,
            "enc_layers" => self.enc_layers = parse_value(key, value, "a positive integer")?,
            "dec_hidden" => self.dec_hidden = parse_value(key, value, "a positive integer")?,
            "findings_cap" => self.findings_cap = parse_value(key, value, "a positive integer")?,
            "impression_cap" => {
                self.impression_cap = parse_value(key, value, "a positive integer")?
            }
            "dropout" => self.dropout = parse_value(key, value, "a number")?,
            "ontology_enabled" => self.ontology_enabled = parse_bool(key, value)?,
            "matcher" => self.matcher = value.parse()?,
            "min_depth" => self.min_depth = parse_value(key, value, "a non-negative integer")?,
            "jaccard" => self.jaccard = parse_value(key, value, "a number")?,
            "window" => self.window = parse_value(key, value, "a positive integer")?,
            "vocab_min_frequency" => {
                self.vocab_min_frequency = parse_value(key, value, "a positive integer")?
            }
            "vocab_max_size" => {
                self.vocab_max_size = parse_value(key, value, "a positive integer")?
            }
            "learning_rate" => self.learning_rate = parse_value(key, value, "a number")?,
            "beta1" => self.beta1 = parse_value(key, value, "a number")?,
            "beta2" => self.beta2 = parse_value(key, value, "a number")?,
            "epsilon" => self.epsilon = parse_value(key, value, "a number")?,
            "batch_size" => self.batch_size = parse_value(key, value, "a positive integer")?,
            "max_epochs" => self.max_epochs = parse_value(key, value, "a positive integer")?,
            "clip_norm" => self.clip_norm = parse_value(key, value, "a number")?,
            "patience" => self.patience = parse_value(key, value, "a positive integer")?,
            "beam" => self.beam = parse_value(key, value, "a positive integer")?,
            "max_len" => self.max_len = parse_value(key, value, "a positive integer")?,
            "length_normalize" => self.length_normalize = parse_bool(key, value)?,
            "block_trigrams" => self.block_trigrams = parse_bool(key, value)?,
            "top_k" => self.top_k = parse_value(key, value, "a positive integer")?,
            "seed" => self.seed = Some(parse_value(key, value, "an unsigned integer")?),
            "ontology" => self.ontology_path = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = Some(v);
        }
        if let Some(v) = &o.ontology_path {
            self.ontology_path = Some(v.clone());
        }
        if let Some(v) = o.matcher {
            self.matcher = v;
        }
        if let Some(v) = o.min_depth {
            self.min_depth = v;
        }
        if let Some(v) = o.jaccard {
            self.jaccard = v;
        }
        if let Some(v) = o.window {
            self.window = v;
        }
        if let Some(v) = o.beam {
            self.beam = v;
        }
        if let Some(v) = o.max_len {
            self.max_len = v;
        }
        if let Some(v) = o.top_k {
            self.top_k = v;
        }
        if let Some(v) = &o.checkpoint {
            self.checkpoint = Some(v.clone());
        }
        if o.plain {
            self.ontology_enabled = false;
        }
    }

    fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.decode_config().validate()?;
        if self.vocab_min_frequency == 0 {
            return Err(Error::config("vocab_min_frequency", "must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be at least 1"));
        }
        // optimization fields are re-validated against the full training
        // contract when a TrainConfig is built; here only a seed can be
        // legitimately absent
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            enc_hidden: self.enc_hidden,
            enc_layers: self.enc_layers,
            dec_hidden: self.dec_hidden,
            findings_cap: self.findings_cap,
            impression_cap: self.impression_cap,
            dropout: self.dropout,
            ontology: self.ontology_enabled,
            matcher: self.matcher,
            min_depth: self.min_depth,
            jaccard: self.jaccard,
            window: self.window,
        }
    }

    /// Training settings; fails when no seed was given because training
    /// without one is not reproducible.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let seed = self.seed.ok_or_else(|| {
            Error::config("seed", "required for training (pass --seed or set it in the config file)")
        })?;
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            clip_norm: self.clip_norm,
            seed,
            dropout: self.dropout,
            patience: self.patience,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            max_len: self.max_len,
            length_normalize: self.length_normalize,
            block_trigrams: self.block_trigrams,
        }
    }

    /// Human-readable dump of every resolved setting, printed at the start
    /// of each run.
    pub fn render_resolved(&self) -> String {
        fn opt_path(p: &Option<PathBuf>) -> String {
            p.as_ref().map_or("(none)".to_string(), |p| p.display().to_string())
        }
        let mut s = String::from("resolved configuration:\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "  {k} = {v}");
        };
        kv("seed", self.seed.map_or("(none)".to_string(), |v| v.to_string()));
        kv("embed_dim", self.embed_dim.to_string());
        kv("enc_hidden", self.enc_hidden.to_string());
        kv("enc_layers", self.enc_layers.to_string());
        kv("dec_hidden", self.dec_hidden.to_string());
        kv("findings_cap", self.findings_cap.to_string());
        kv("impression_cap", self.impression_cap.to_string());
        kv("dropout", self.dropout.to_string());
        kv("ontology_enabled", self.ontology_enabled.to_string());
        kv("matcher", self.matcher.to_string());
        kv("min_depth", self.min_depth.to_string());
        kv("jaccard", self.jaccard.to_string());
        kv("window", self.window.to_string());
        kv("vocab_min_frequency", self.vocab_min_frequency.to_string());
        kv("vocab_max_size", self.vocab_max_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("patience", self.patience.to_string());
        kv("beam", self.beam.to_string());
        kv("max_len", self.max_len.to_string());
        kv("length_normalize", self.length_normalize.to_string());
        kv("block_trigrams", self.block_trigrams.to_string());
        kv("top_k", self.top_k.to_string());
        kv("ontology", opt_path(&self.ontology_path));
        kv("checkpoint", opt_path(&self.checkpoint));
        kv("embeddings", opt_path(&self.embeddings));
        s
    }
}
