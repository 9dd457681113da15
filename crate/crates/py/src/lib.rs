//! Python bindings over the core library: tokenization, concept matching,
//! synthetic data, training, decoding, ROUGE/t-test scoring, and the
//! extractive baselines.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ontopg::baselines::{baseline_summary, BaselineMethod};
use ontopg::config::AppConfig;
use ontopg::corpus::{build_vocabulary, read_reports, tokenize as core_tokenize, Report};
use ontopg::decoding::{summarize_report, DecodeConfig};
use ontopg::evaluation::{
    attention_trace, corpus_rouge, paired_t_test, rouge_l, rouge_n, RougeScore,
};
use ontopg::gradcheck::run_gradcheck;
use ontopg::model::{MatcherKind, Model};
use ontopg::ontology::{load_ontology, match_exact, match_fuzzy, Ontology};
use ontopg::synthetic::{generate_synthetic_corpus, synthetic_ontology};

fn to_py_err(e: ontopg::Error) -> PyErr {
    match e {
        ontopg::Error::Io { .. } | ontopg::Error::Format { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn resolve_ontology(path: Option<PathBuf>) -> PyResult<Ontology> {
    match path {
        Some(p) => load_ontology(p).map_err(to_py_err),
        None => Ok(synthetic_ontology()),
    }
}

/// Whitespace/punctuation tokenizer used across the pipeline.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    core_tokenize(text)
}

/// Generate the deterministic synthetic corpus as a list of dicts with
/// "id", "findings", and "impression" keys.
#[pyfunction]
#[pyo3(signature = (seed, count))]
fn gen_synthetic(py: Python<'_>, seed: u64, count: usize) -> PyResult<Py<PyList>> {
    let ontology = synthetic_ontology();
    let reports = generate_synthetic_corpus(seed, count, &ontology).map_err(to_py_err)?;
    let out = PyList::empty(py);
    for r in &reports {
        let d = PyDict::new(py);
        d.set_item("id", &r.id)?;
        d.set_item("findings", &r.findings_text)?;
        d.set_item("impression", r.impression_text.as_deref().unwrap_or(""))?;
        out.append(d)?;
    }
    Ok(out.into())
}

/// Match concept terms in `text`; returns dicts with concept id, span, the
/// matched surface tokens, and the match score.
#[pyfunction]
#[pyo3(signature = (text, matcher="exact", min_depth=8, jaccard=0.7, window=3, ontology_path=None))]
fn match_concepts(
    py: Python<'_>,
    text: &str,
    matcher: &str,
    min_depth: usize,
    jaccard: f64,
    window: usize,
    ontology_path: Option<PathBuf>,
) -> PyResult<Py<PyList>> {
    let kind: MatcherKind = matcher.parse().map_err(to_py_err)?;
    let ontology = resolve_ontology(ontology_path)?;
    let tokens = core_tokenize(text);
    let matches = match kind {
        MatcherKind::Exact => match_exact(&ontology, &tokens, min_depth),
        MatcherKind::Fuzzy => match_fuzzy(&ontology, &tokens, jaccard, window),
    };
    let out = PyList::empty(py);
    for m in &matches {
        let d = PyDict::new(py);
        d.set_item("concept_id", &m.concept_id)?;
        d.set_item("span_start", m.span_start)?;
        d.set_item("span_end", m.span_end)?;
        d.set_item("matched_tokens", &m.matched_tokens)?;
        d.set_item("score", m.score)?;
        out.append(d)?;
    }
    Ok(out.into())
}

fn score_dict<'py>(py: Python<'py>, s: &RougeScore) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("precision", s.precision)?;
    d.set_item("recall", s.recall)?;
    d.set_item("f1", s.f1)?;
    Ok(d)
}

/// ROUGE-1/2/L between one system text and one reference text (F1 + parts).
#[pyfunction]
fn rouge(py: Python<'_>, system: &str, reference: &str) -> PyResult<Py<PyDict>> {
    let sys = core_tokenize(system);
    let rf = core_tokenize(reference);
    let d = PyDict::new(py);
    d.set_item("rouge1", score_dict(py, &rouge_n(&sys, &rf, 1))?)?;
    d.set_item("rouge2", score_dict(py, &rouge_n(&sys, &rf, 2))?)?;
    d.set_item("rougeL", score_dict(py, &rouge_l(&sys, &rf))?)?;
    Ok(d.into())
}

/// Corpus-level ROUGE (unweighted mean over aligned pairs, scaled to 0-100).
#[pyfunction]
fn rouge_corpus(
    py: Python<'_>,
    system: Vec<(String, String)>,
    reference: Vec<(String, String)>,
) -> PyResult<Py<PyDict>> {
    let sys: Vec<(String, Vec<String>)> =
        system.into_iter().map(|(id, t)| (id, core_tokenize(&t))).collect();
    let rf: Vec<(String, Vec<String>)> =
        reference.into_iter().map(|(id, t)| (id, core_tokenize(&t))).collect();
    let scores = corpus_rouge(&sys, &rf).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("rouge1", score_dict(py, &scores.rg1)?)?;
    d.set_item("rouge2", score_dict(py, &scores.rg2)?)?;
    d.set_item("rougeL", score_dict(py, &scores.rgl)?)?;
    Ok(d.into())
}

/// Two-sided paired t-test; returns {"t", "p", "df", "mean_difference"}.
#[pyfunction]
fn t_test(py: Python<'_>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Py<PyDict>> {
    let r = paired_t_test(&a, &b).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("t", r.t)?;
    d.set_item("p", r.p)?;
    d.set_item("df", r.df)?;
    d.set_item("mean_difference", r.mean_difference)?;
    Ok(d.into())
}

/// Extractive summary of `text` with "lexrank" or "lsa".
#[pyfunction]
#[pyo3(signature = (text, method="lexrank", top_k=3))]
fn extractive_summary(text: &str, method: &str, top_k: usize) -> PyResult<String> {
    let method: BaselineMethod = method.parse().map_err(to_py_err)?;
    baseline_summary(text, method, top_k).map_err(to_py_err)
}

/// Finite-difference gradient verification on the tiny model; returns
/// {"passed", "worst", "parameters", "elapsed_seconds"}.
#[pyfunction]
#[pyo3(signature = (seed=7))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Py<PyDict>> {
    let report = run_gradcheck(seed).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("passed", report.passed)?;
    d.set_item("worst", report.worst)?;
    d.set_item("parameters", report.parameters.len())?;
    d.set_item("elapsed_seconds", report.elapsed.as_secs_f64())?;
    Ok(d.into())
}

/// Train a model on JSONL report files; returns
/// {"checkpoint", "metrics", "best_dev_loss", "epochs_run"}.
#[pyfunction]
#[pyo3(signature = (train_path, dev_path, out_dir, seed, overrides=None))]
fn train(
    py: Python<'_>,
    train_path: PathBuf,
    dev_path: PathBuf,
    out_dir: PathBuf,
    seed: u64,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyDict>> {
    let mut cfg = AppConfig::default();
    cfg.seed = Some(seed);
    if let Some(kv) = overrides {
        for (k, v) in kv.iter() {
            let key: String = k.extract()?;
            let value: String = v.str()?.extract()?;
            cfg.set(&key, &value).map_err(to_py_err)?;
        }
    }
    cfg.seed = Some(seed);
    let ontology = resolve_ontology(cfg.ontology_path.clone())?;
    let train_set = read_reports(&train_path).map_err(to_py_err)?;
    let dev_set = read_reports(&dev_path).map_err(to_py_err)?;
    let vocab = build_vocabulary(&train_set, cfg.vocab_min_frequency, cfg.vocab_max_size)
        .map_err(to_py_err)?;
    let train_cfg = cfg.train_config().map_err(to_py_err)?;
    let mut model =
        Model::new(cfg.model_config(), vocab, seed, None).map_err(to_py_err)?;
    let outcome = ontopg::training::train(
        &mut model,
        &ontology,
        &train_set,
        &dev_set,
        &train_cfg,
        &out_dir,
    )
    .map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("checkpoint", outcome.checkpoint_path)?;
    d.set_item("metrics", outcome.metrics_path)?;
    d.set_item("best_dev_loss", outcome.best_dev_loss)?;
    d.set_item("epochs_run", outcome.epochs_run)?;
    Ok(d.into())
}

/// A loaded checkpoint that turns findings text into impression summaries.
#[pyclass]
struct Summarizer {
    model: Model,
    ontology: Ontology,
}

#[pymethods]
impl Summarizer {
    #[new]
    #[pyo3(signature = (checkpoint, ontology_path=None))]
    fn new(checkpoint: PathBuf, ontology_path: Option<PathBuf>) -> PyResult<Self> {
        let model = Model::load(&checkpoint).map_err(to_py_err)?;
        let ontology = resolve_ontology(ontology_path)?;
        Ok(Summarizer { model, ontology })
    }

    /// Summarize one findings text; returns {"text", "log_prob", "score"}.
    #[pyo3(signature = (findings, beam=5, max_len=100))]
    fn summarize(
        &self,
        py: Python<'_>,
        findings: &str,
        beam: usize,
        max_len: usize,
    ) -> PyResult<Py<PyDict>> {
        let cfg = DecodeConfig { beam, max_len, ..DecodeConfig::default() };
        cfg.validate().map_err(to_py_err)?;
        let report = Report::new("py", findings, None);
        let summary = summarize_report(&self.model, &self.ontology, &report, &cfg)
            .map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("text", summary.text)?;
        d.set_item("log_prob", summary.log_prob)?;
        d.set_item("score", summary.score)?;
        Ok(d.into())
    }

    /// Mean source attention for a findings text; returns parallel lists
    /// {"tokens", "mean_attention", "matched"}.
    #[pyo3(signature = (findings, beam=5, max_len=100))]
    fn attention(
        &self,
        py: Python<'_>,
        findings: &str,
        beam: usize,
        max_len: usize,
    ) -> PyResult<Py<PyDict>> {
        let cfg = DecodeConfig { beam, max_len, ..DecodeConfig::default() };
        cfg.validate().map_err(to_py_err)?;
        let report = Report::new("py", findings, None);
        let summary = summarize_report(&self.model, &self.ontology, &report, &cfg)
            .map_err(to_py_err)?;
        let trace = attention_trace(&self.model, &self.ontology, &summary).map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("tokens", trace.tokens)?;
        d.set_item("mean_attention", trace.mean_attention)?;
        d.set_item("matched", trace.matched)?;
        Ok(d.into())
    }

    /// Base vocabulary size of the loaded model.
    #[getter]
    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    /// Whether the concept pathway is active in the loaded model.
    #[getter]
    fn ontology_enabled(&self) -> bool {
        self.model.config.ontology
    }
}

#[pymodule]
fn ontopg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(match_concepts, m)?)?;
    m.add_function(wrap_pyfunction!(rouge, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(t_test, m)?)?;
    m.add_function(wrap_pyfunction!(extractive_summary, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Summarizer>()?;
    Ok(())
}
