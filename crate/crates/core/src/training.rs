//! Teacher-forced training: Adam with global-norm gradient clipping,
//! per-epoch dev evaluation, best-checkpoint keeping, and early stopping.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{fnv1a, Report};
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::ontology::{Ontology, OntologySequence};
use crate::params::ParameterSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub dropout: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            max_epochs: 30,
            clip_norm: 2.0,
            seed: 0,
            dropout: 0.5,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a positive finite number"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Optimizer state: step counter plus first/second moment accumulators,
/// shaped like their parameters, and the early-stopping bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
    pub best_dev_loss: f64,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(params: &ParameterSet) -> Self {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, p) in params.iter() {
            if p.trainable {
                first.insert(name.clone(), vec![0.0; p.value.len()]);
                second.insert(name.clone(), vec![0.0; p.value.len()]);
            }
        }
        TrainState {
            step: 0,
            first_moment: first,
            second_moment: second,
            best_dev_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// Scale all trainable gradients so their global L2 norm is at most
/// `clip_norm`; returns the pre-clip norm. A non-finite gradient aborts
/// with a diagnostic naming the offending parameter.
pub fn clip_gradients(params: &mut ParameterSet, clip_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (name, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        for &g in &p.grad {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(format!(
                    "parameter '{name}' has gradient {g}"
                )));
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > clip_norm {
        let k = clip_norm / norm;
        for (_, p) in params.iter_mut() {
            if p.trainable {
                p.grad.iter_mut().for_each(|g| *g *= k);
            }
        }
    }
    Ok(norm)
}

/// One Adam update from the gradients currently stored in `params`:
/// clip to the global norm first, then m ← β₁m + (1−β₁)g,
/// v ← β₂v + (1−β₂)g², θ ← θ − lr·m̂/(√v̂ + ε) with bias-corrected
/// m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ). Returns the pre-clip gradient norm.
pub fn adam_step(
    params: &mut ParameterSet,
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<f64> {
    let norm = clip_gradients(params, cfg.clip_norm)?;
    state.step += 1;
    let t = i32::try_from(state.step)
        .map_err(|_| Error::contract("optimizer step counter overflowed"))?;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let m = state
            .first_moment
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("optimizer state missing '{name}'")))?;
        let v = state
            .second_moment
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("optimizer state missing '{name}'")))?;
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.value[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(norm)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: u64,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub best_dev_loss: f64,
    pub epochs_run: usize,
    pub records: Vec<MetricsRecord>,
}

/// Derive the concept input for each report from its (capped) findings.
pub fn derive_concept_inputs(
    model: &Model,
    ontology: &Ontology,
    reports: &[Report],
) -> Result<Vec<OntologySequence>> {
    reports
        .iter()
        .map(|r| {
            let n = r.findings_tokens.len().min(model.config.findings_cap);
            model.derive_u(ontology, &r.findings_tokens[..n])
        })
        .collect()
}

/// Mean teacher-forced loss over a split, dropout disabled.
pub fn mean_eval_loss(
    model: &Model,
    reports: &[Report],
    concept_inputs: &[OntologySequence],
) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::config("eval split", "dataset is empty"));
    }
    let mut total = 0.0;
    for (r, u) in reports.iter().zip(concept_inputs) {
        total += model.forward_teacher_forced(r, u, Mode::Eval)?.loss_value();
    }
    Ok(total / reports.len() as f64)
}

/// Accumulate mean gradients for one batch into `model.params` and return
/// the mean loss. Callers must zero the accumulators first.
fn accumulate_batch(
    model: &mut Model,
    reports: &[Report],
    concept_inputs: &[OntologySequence],
    indices: &[usize],
    seed: u64,
    example_counter: &mut u64,
) -> Result<f64> {
    let mut batch_loss = 0.0;
    for &idx in indices {
        let dropout_seed =
            seed ^ fnv1a(format!("dropout-{}", *example_counter).as_bytes());
        *example_counter += 1;
        let mut fp = model.forward_teacher_forced(
            &reports[idx],
            &concept_inputs[idx],
            Mode::Train { dropout_seed },
        )?;
        batch_loss += fp.loss_value();
        fp.backward()?;
        fp.accumulate_grads(&mut model.params)?;
    }
    let inv = 1.0 / indices.len() as f64;
    model.params.scale_grads(inv);
    Ok(batch_loss * inv)
}

/// Full training loop: deterministic shuffling by seed, one Adam step per
/// batch (gradients averaged over the batch), dev loss after every epoch,
/// best checkpoint kept on dev improvement, stop after `patience` epochs
/// without improvement or at `max_epochs`. Emits a line-delimited metrics
/// log of (epoch, step, split, loss) records.
pub fn train(
    model: &mut Model,
    ontology: &Ontology,
    train_set: &[Report],
    dev_set: &[Report],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("train split", "dataset is empty"));
    }
    if dev_set.is_empty() {
        return Err(Error::config("dev split", "dataset is empty"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    model.config.dropout = cfg.dropout;

    let train_u = derive_concept_inputs(model, ontology, train_set)?;
    let dev_u = derive_concept_inputs(model, ontology, dev_set)?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let checkpoint_path = out_dir.join("best.ckpt");
    let mut metrics_file = BufWriter::new(
        File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?,
    );
    let mut records: Vec<MetricsRecord> = Vec::new();
    let emit = |file: &mut BufWriter<File>,
                    records: &mut Vec<MetricsRecord>,
                    rec: MetricsRecord|
     -> Result<()> {
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::contract(format!("metrics serialization failed: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        records.push(rec);
        Ok(())
    };

    let mut state = TrainState::new(&model.params);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ fnv1a(b"train-shuffle"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut example_counter: u64 = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            model.params.zero_grads();
            let batch_loss = accumulate_batch(
                model,
                train_set,
                &train_u,
                chunk,
                cfg.seed,
                &mut example_counter,
            )?;
            adam_step(&mut model.params, &mut state, cfg)?;
            emit(
                &mut metrics_file,
                &mut records,
                MetricsRecord { epoch, step: state.step, split: "train".into(), loss: batch_loss },
            )?;
        }
        let dev_loss = mean_eval_loss(model, dev_set, &dev_u)?;
        emit(
            &mut metrics_file,
            &mut records,
            MetricsRecord { epoch, step: state.step, split: "dev".into(), loss: dev_loss },
        )?;
        if dev_loss < state.best_dev_loss {
            state.best_dev_loss = dev_loss;
            state.epochs_since_improvement = 0;
            model.save(&checkpoint_path)?;
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }
    metrics_file.flush().map_err(|e| Error::io(&metrics_path, e))?;
    Ok(TrainOutcome {
        checkpoint_path,
        metrics_path,
        best_dev_loss: state.best_dev_loss,
        epochs_run,
        records,
    })
}

/// Run `steps` optimizer steps against one fixed batch (dropout disabled)
/// and report the batch loss before any update and after each step —
/// `steps + 1` values. Used by the optimization smoke check that loss
/// strictly decreases over the first steps of a fresh model.
pub fn fixed_batch_step_losses(
    model: &mut Model,
    reports: &[Report],
    concept_inputs: &[OntologySequence],
    cfg: &TrainConfig,
    steps: usize,
) -> Result<Vec<f64>> {
    if reports.is_empty() {
        return Err(Error::config("fixed batch", "dataset is empty"));
    }
    let mut state = TrainState::new(&model.params);
    let indices: Vec<usize> = (0..reports.len()).collect();
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        model.params.zero_grads();
        let mut batch_loss = 0.0;
        for &idx in &indices {
            let mut fp =
                model.forward_teacher_forced(&reports[idx], &concept_inputs[idx], Mode::Eval)?;
            batch_loss += fp.loss_value();
            fp.backward()?;
            fp.accumulate_grads(&mut model.params)?;
        }
        let inv = 1.0 / indices.len() as f64;
        model.params.scale_grads(inv);
        losses.push(batch_loss * inv);
        adam_step(&mut model.params, &mut state, cfg)?;
    }
    losses.push(mean_eval_loss(model, reports, concept_inputs)?);
    Ok(losses)
}
