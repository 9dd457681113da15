//! Command-line driver: thin adapters over the library modules, sharing one
//! resolved configuration (defaults < config file < flags) that every run
//! prints to stderr before doing work.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ontopg::config::{AppConfig, Overrides};
use ontopg::corpus::{build_vocabulary, load_embeddings, read_reports, tokenize, write_reports};
use ontopg::decoding::summarize_report;
use ontopg::error::{Error, Result};
use ontopg::evaluation::{attention_trace, attention_tsv, corpus_rouge};
use ontopg::gradcheck::{format_report, run_gradcheck};
use ontopg::model::{MatcherKind, Model};
use ontopg::ontology::{load_ontology, match_exact, match_fuzzy, Ontology};
use ontopg::synthetic::{generate_synthetic_corpus, synthetic_ontology, synthetic_ontology_records};
use ontopg::training::train;

#[derive(Parser)]
#[command(
    name = "ontopg",
    version,
    about = "Ontology-aware pointer-generator summarization of findings/impression reports"
)]
struct Cli {
    /// Flat key=value configuration file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed (required for train).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concept hierarchy file (JSON lines); defaults to the bundled hierarchy.
    #[arg(long, global = true, value_name = "PATH")]
    ontology: Option<PathBuf>,
    /// Concept matching mode.
    #[arg(long, global = true, value_name = "exact|fuzzy")]
    matcher: Option<MatcherKind>,
    /// Minimum concept depth eligible for matching.
    #[arg(long, global = true, value_name = "N")]
    min_depth: Option<usize>,
    /// Jaccard threshold for the fuzzy matcher.
    #[arg(long, global = true, value_name = "X")]
    jaccard: Option<f64>,
    /// Longest token span (in tokens) the fuzzy matcher scores.
    #[arg(long, global = true, value_name = "W")]
    window: Option<usize>,
    /// Beam width for decoding.
    #[arg(long, global = true, value_name = "B")]
    beam: Option<usize>,
    /// Maximum generated summary length.
    #[arg(long, global = true, value_name = "L")]
    max_len: Option<usize>,
    /// Sentences an extractive baseline keeps.
    #[arg(long, global = true, value_name = "K")]
    top_k: Option<usize>,
    /// Model checkpoint to load (summarize, export-attention).
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Disable the concept pathway (plain pointer-generator).
    #[arg(long, global = true)]
    plain: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic findings/impression corpus.
    GenSynthetic {
        /// Output dataset (JSON lines).
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Number of reports to generate.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Also export the bundled concept hierarchy to this path.
        #[arg(long, value_name = "PATH")]
        ontology_out: Option<PathBuf>,
    },
    /// Print concept matches for each report as tab-separated rows.
    Match {
        /// Input dataset (JSON lines).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Train a summarizer; writes metrics.jsonl and best.ckpt into --out.
    Train {
        /// Training split (JSON lines with impressions).
        #[arg(long, value_name = "PATH")]
        train: PathBuf,
        /// Development split used for model selection.
        #[arg(long, value_name = "PATH")]
        dev: PathBuf,
        /// Output directory for the metrics log and best checkpoint.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Generate summaries with a trained checkpoint (JSON lines out).
    Summarize {
        /// Input dataset (JSON lines).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Output file; one {"id", "text", "log_prob"} record per report.
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
    /// Extractive baseline summaries (JSON lines out).
    Baseline {
        /// Input dataset (JSON lines).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Output file; one {"id", "text"} record per report.
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Extractive method.
        #[arg(long, value_name = "lexrank|lsa")]
        method: String,
    },
    /// Score system summaries against references (ROUGE-1/2/L table).
    Evaluate {
        /// System output (JSON lines with "text", or reports with impressions).
        #[arg(long, value_name = "PATH")]
        system: PathBuf,
        /// Reference summaries in either accepted format.
        #[arg(long, value_name = "PATH")]
        reference: PathBuf,
    },
    /// Write per-report mean source-attention tables (token, weight, match).
    ExportAttention {
        /// Input dataset (JSON lines).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Directory receiving one <report id>.tsv per report.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Verify model gradients against central finite differences.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        ontology_path: cli.ontology.clone(),
        matcher: cli.matcher,
        min_depth: cli.min_depth,
        jaccard: cli.jaccard,
        window: cli.window,
        beam: cli.beam,
        max_len: cli.max_len,
        top_k: cli.top_k,
        checkpoint: cli.checkpoint.clone(),
        plain: cli.plain,
    };
    let cfg = AppConfig::resolve(cli.config.as_deref(), &overrides)?;
    eprint!("{}", cfg.render_resolved());

    match cli.command {
        Command::GenSynthetic { out, count, ontology_out } => {
            gen_synthetic(&cfg, &out, count, ontology_out.as_deref())
        }
        Command::Match { input } => match_reports(&cfg, &input),
        Command::Train { train, dev, out } => train_command(&cfg, &train, &dev, &out),
        Command::Summarize { input, output } => summarize_command(&cfg, &input, &output),
        Command::Baseline { input, output, method } => {
            baseline_command(&cfg, &input, &output, &method)
        }
        Command::Evaluate { system, reference } => evaluate_command(&system, &reference),
        Command::ExportAttention { input, out_dir } => {
            export_attention_command(&cfg, &input, &out_dir)
        }
        Command::Gradcheck => gradcheck_command(&cfg),
    }
}

/// The hierarchy named in the configuration, or the bundled one.
fn resolve_ontology(cfg: &AppConfig) -> Result<Ontology> {
    match &cfg.ontology_path {
        Some(path) => load_ontology(path),
        None => Ok(synthetic_ontology()),
    }
}

fn gen_synthetic(
    cfg: &AppConfig,
    out: &Path,
    count: usize,
    ontology_out: Option<&Path>,
) -> Result<()> {
    let ontology = resolve_ontology(cfg)?;
    let seed = cfg.seed.unwrap_or(0);
    let reports = generate_synthetic_corpus(seed, count, &ontology)?;
    write_reports(out, &reports)?;
    if let Some(path) = ontology_out {
        ontopg::ontology::write_ontology(path, &synthetic_ontology_records())?;
    }
    println!("wrote {} reports to {}", reports.len(), out.display());
    Ok(())
}

fn match_reports(cfg: &AppConfig, input: &Path) -> Result<()> {
    let ontology = resolve_ontology(cfg)?;
    let reports = read_reports(input)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let emit = |e: std::io::Error| Error::io("stdout", e);
    writeln!(out, "report_id\tspan_start\tspan_end\tconcept_id\tscore\tmatched_text")
        .map_err(emit)?;
    for r in &reports {
        let matches = match cfg.matcher {
            MatcherKind::Exact => match_exact(&ontology, &r.findings_tokens, cfg.min_depth),
            MatcherKind::Fuzzy => {
                match_fuzzy(&ontology, &r.findings_tokens, cfg.jaccard, cfg.window)
            }
        };
        for m in matches {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.4}\t{}",
                r.id,
                m.span_start,
                m.span_end,
                m.concept_id,
                m.score,
                m.matched_tokens.join(" ")
            )
            .map_err(emit)?;
        }
    }
    out.flush().map_err(emit)
}

fn train_command(cfg: &AppConfig, train_path: &Path, dev_path: &Path, out: &Path) -> Result<()> {
    let train_cfg = cfg.train_config()?;
    let ontology = resolve_ontology(cfg)?;
    let train_set = read_reports(train_path)?;
    let dev_set = read_reports(dev_path)?;
    let vocab = build_vocabulary(&train_set, cfg.vocab_min_frequency, cfg.vocab_max_size)?;
    eprintln!("vocabulary: {} entries", vocab.len());
    let embeddings = match &cfg.embeddings {
        Some(path) => Some(load_embeddings(path, &vocab)?),
        None => None,
    };
    let mut model = Model::new(cfg.model_config(), vocab, train_cfg.seed, embeddings.as_ref())?;
    let outcome = train(&mut model, &ontology, &train_set, &dev_set, &train_cfg, out)?;
    println!(
        "trained {} epochs; best dev loss {:.6}; checkpoint {}; metrics {}",
        outcome.epochs_run,
        outcome.best_dev_loss,
        outcome.checkpoint_path.display(),
        outcome.metrics_path.display()
    );
    Ok(())
}

fn load_model(cfg: &AppConfig) -> Result<Model> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| {
        Error::config("checkpoint", "required (pass --checkpoint or set it in the config file)")
    })?;
    Model::load(path)
}

#[derive(Serialize)]
struct SummaryRecord {
    id: String,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_prob: Option<f64>,
}

fn write_summaries(path: &Path, records: &[SummaryRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::contract(format!("summary serialization failed: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn summarize_command(cfg: &AppConfig, input: &Path, output: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    let ontology = resolve_ontology(cfg)?;
    let decode = cfg.decode_config();
    let reports = read_reports(input)?;
    let mut records = Vec::with_capacity(reports.len());
    for r in &reports {
        let summary = summarize_report(&model, &ontology, r, &decode)?;
        records.push(SummaryRecord {
            id: summary.id,
            text: summary.text,
            log_prob: Some(summary.log_prob),
        });
    }
    write_summaries(output, &records)?;
    println!("wrote {} summaries to {}", records.len(), output.display());
    Ok(())
}

fn baseline_command(cfg: &AppConfig, input: &Path, output: &Path, method: &str) -> Result<()> {
    let method = method.parse()?;
    let reports = read_reports(input)?;
    let mut records = Vec::with_capacity(reports.len());
    for r in &reports {
        let text = ontopg::baselines::baseline_summary(&r.findings_text, method, cfg.top_k)?;
        records.push(SummaryRecord { id: r.id.clone(), text, log_prob: None });
    }
    write_summaries(output, &records)?;
    println!("wrote {} summaries to {}", records.len(), output.display());
    Ok(())
}

/// Read summaries for scoring: each line needs an "id" and either a "text"
/// field or a report's "impression". Returns tokenized texts in file order.
fn read_summary_texts(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::format(path, lineno + 1, format!("invalid JSON: {e}")))?;
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::format(path, lineno + 1, "missing string field 'id'"))?
            .to_string();
        let body = value
            .get("text")
            .or_else(|| value.get("impression"))
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                Error::format(path, lineno + 1, "record has neither 'text' nor 'impression'")
            })?;
        out.push((id, tokenize(body)));
    }
    if out.is_empty() {
        return Err(Error::format(path, 1, "no summary records found"));
    }
    Ok(out)
}

fn evaluate_command(system: &Path, reference: &Path) -> Result<()> {
    let sys = read_summary_texts(system)?;
    let rf = read_summary_texts(reference)?;
    let scores = corpus_rouge(&sys, &rf)?;
    println!("metric\tprecision\trecall\tf1");
    for (name, s) in [("ROUGE-1", &scores.rg1), ("ROUGE-2", &scores.rg2), ("ROUGE-L", &scores.rgl)]
    {
        println!("{name}\t{:.2}\t{:.2}\t{:.2}", s.precision, s.recall, s.f1);
    }
    Ok(())
}

fn export_attention_command(cfg: &AppConfig, input: &Path, out_dir: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    let ontology = resolve_ontology(cfg)?;
    let decode = cfg.decode_config();
    let reports = read_reports(input)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for r in &reports {
        let summary = summarize_report(&model, &ontology, r, &decode)?;
        let trace = attention_trace(&model, &ontology, &summary)?;
        let path = out_dir.join(format!("{}.tsv", sanitize_file_stem(&r.id)));
        std::fs::write(&path, attention_tsv(&trace)).map_err(|e| Error::io(&path, e))?;
    }
    println!("wrote {} attention tables to {}", reports.len(), out_dir.display());
    Ok(())
}

/// Report ids become file names; keep only characters that are safe there.
fn sanitize_file_stem(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "report".to_string()
    } else {
        cleaned
    }
}

fn gradcheck_command(cfg: &AppConfig) -> Result<()> {
    let report = run_gradcheck(cfg.seed.unwrap_or(7))?;
    print!("{}", format_report(&report));
    if report.passed {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "gradient check failed: max relative error {:.3e}",
            report.worst
        )))
    }
}

