//! Scoring: ROUGE-1/2/L with corpus averaging, a paired t-test for
//! per-report score comparisons, and per-token attention export.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::decoding::GeneratedSummary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ontology::{match_exact, Ontology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore { precision: 0.0, recall: 0.0, f1: 0.0 };

    fn from_counts(overlap: f64, candidate_total: f64, reference_total: f64) -> RougeScore {
        let precision = if candidate_total > 0.0 { overlap / candidate_total } else { 0.0 };
        let recall = if reference_total > 0.0 { overlap / reference_total } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore { precision, recall, f1 }
    }

    fn scaled(self, k: f64) -> RougeScore {
        RougeScore { precision: self.precision * k, recall: self.recall * k, f1: self.f1 * k }
    }
}

/// Clipped n-gram overlap: each candidate n-gram counts at most as often as
/// it appears in the reference. Empty sequences score zero.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be at least 1");
    if candidate.len() < n || reference.len() < n {
        return RougeScore::ZERO;
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for g in reference.windows(n) {
        *ref_counts.entry(g).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
    for g in candidate.windows(n) {
        *cand_counts.entry(g).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for (g, c) in &cand_counts {
        overlap += (*c).min(ref_counts.get(g).copied().unwrap_or(0));
    }
    RougeScore::from_counts(
        overlap as f64,
        (candidate.len() - n + 1) as f64,
        (reference.len() - n + 1) as f64,
    )
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Summary-level longest-common-subsequence score over whole token sequences.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let lcs = lcs_length(candidate, reference) as f64;
    RougeScore::from_counts(lcs, candidate.len() as f64, reference.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerReportRouge {
    pub id: String,
    pub rg1: RougeScore,
    pub rg2: RougeScore,
    pub rgl: RougeScore,
}

/// Corpus-level scores: unweighted means of the per-report numbers, scaled
/// to the 0–100 presentation range (per-report entries are scaled the same
/// way).
#[derive(Debug, Clone, Serialize)]
pub struct CorpusRouge {
    pub rg1: RougeScore,
    pub rg2: RougeScore,
    pub rgl: RougeScore,
    pub per_report: Vec<PerReportRouge>,
}

pub fn corpus_rouge(
    system: &[(String, Vec<String>)],
    reference: &[(String, Vec<String>)],
) -> Result<CorpusRouge> {
    if system.len() != reference.len() {
        return Err(Error::Alignment(format!(
            "system has {} outputs but reference has {}",
            system.len(),
            reference.len()
        )));
    }
    if system.is_empty() {
        return Err(Error::Alignment("cannot score an empty corpus".to_string()));
    }
    let mut per_report = Vec::with_capacity(system.len());
    for (i, ((sid, sys), (rid, rf))) in system.iter().zip(reference).enumerate() {
        if sid != rid {
            return Err(Error::Alignment(format!(
                "record {i}: system id '{sid}' does not match reference id '{rid}'"
            )));
        }
        per_report.push(PerReportRouge {
            id: sid.clone(),
            rg1: rouge_n(sys, rf, 1).scaled(100.0),
            rg2: rouge_n(sys, rf, 2).scaled(100.0),
            rgl: rouge_l(sys, rf).scaled(100.0),
        });
    }
    let n = per_report.len() as f64;
    let mean = |f: &dyn Fn(&PerReportRouge) -> RougeScore| {
        let (mut p, mut r, mut f1) = (0.0, 0.0, 0.0);
        for rec in &per_report {
            let s = f(rec);
            p += s.precision;
            r += s.recall;
            f1 += s.f1;
        }
        RougeScore { precision: p / n, recall: r / n, f1: f1 / n }
    };
    Ok(CorpusRouge {
        rg1: mean(&|r| r.rg1),
        rg2: mean(&|r| r.rg2),
        rgl: mean(&|r| r.rgl),
        per_report,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PairedTTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub mean_difference: f64,
}

/// Two-sided paired t-test on the per-item differences a−b. Degenerate
/// variance cases follow the stated conventions: all-zero differences give
/// p = 1, zero-variance nonzero-mean differences give p = 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::contract("paired test needs at least 2 pairs"));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let df = n - 1.0;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTest { t: 0.0, p: 1.0, df, mean_difference: mean }
        } else {
            PairedTTest { t: f64::INFINITY * mean.signum(), p: 0.0, df, mean_difference: mean }
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::contract(format!("t-distribution setup failed: {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(PairedTTest { t, p, df, mean_difference: mean })
}

/// Per-source-token attention averaged over a generated summary's decoding
/// steps, with flags marking tokens inside exact-matcher concept spans.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionTrace {
    pub id: String,
    pub tokens: Vec<String>,
    pub mean_attention: Vec<f64>,
    pub matched: Vec<bool>,
    pub steps: usize,
}

pub fn attention_trace(
    model: &Model,
    ontology: &Ontology,
    summary: &GeneratedSummary,
) -> Result<AttentionTrace> {
    if summary.src_attention.is_empty() {
        return Err(Error::contract(format!(
            "summary '{}' has no attention rows to average",
            summary.id
        )));
    }
    let n = summary.source_tokens.len();
    let mut mean = vec![0.0; n];
    for (step, row) in summary.src_attention.iter().enumerate() {
        if row.len() != n {
            return Err(Error::contract(format!(
                "attention row {step} has {} weights for {n} source tokens",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "attention row {step} sums to {sum}, expected 1"
            )));
        }
        for (m, w) in mean.iter_mut().zip(row) {
            *m += w;
        }
    }
    let steps = summary.src_attention.len();
    mean.iter_mut().for_each(|m| *m /= steps as f64);

    let mut matched = vec![false; n];
    for cm in match_exact(ontology, &summary.source_tokens, model.config.min_depth) {
        for flag in &mut matched[cm.span_start..cm.span_end] {
            *flag = true;
        }
    }
    Ok(AttentionTrace {
        id: summary.id.clone(),
        tokens: summary.source_tokens.clone(),
        mean_attention: mean,
        matched,
        steps,
    })
}

/// Tab-separated rendering: token, mean weight, concept-match flag.
pub fn attention_tsv(trace: &AttentionTrace) -> String {
    let mut out = String::from("token\tmean_attention\tconcept_match\n");
    for i in 0..trace.tokens.len() {
        out.push_str(&format!(
            "{}\t{:.6}\t{}\n",
            trace.tokens[i], trace.mean_attention[i], trace.matched[i] as u8
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identical_sequences_score_one() {
        let t = toks("no acute disease .");
        for n in [1, 2] {
            let s = rouge_n(&t, &t, n);
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0), "n={n}");
        }
        let s = rouge_l(&t, &t);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn unigram_hand_case_scores_point_eight() {
        let s = rouge_n(&toks("the cat sat"), &toks("the cat"), 1);
        assert!((s.recall - 1.0).abs() < 1e-15);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clipping_limits_repeated_candidate_ngrams() {
        let s = rouge_n(&toks("a a a"), &toks("a a"), 1);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bigram_hand_case() {
        let s = rouge_n(&toks("a b x c"), &toks("a b c"), 2);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 0.5).abs() < 1e-15);
        assert!((s.f1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn disjoint_and_empty_sequences_score_zero() {
        for n in [1, 2] {
            assert_eq!(rouge_n(&toks("a b"), &toks("c d"), n), RougeScore::ZERO);
            assert_eq!(rouge_n(&[], &toks("c d"), n), RougeScore::ZERO);
            assert_eq!(rouge_n(&toks("a b"), &[], n), RougeScore::ZERO);
        }
        assert_eq!(rouge_l(&toks("a b"), &toks("c d")), RougeScore::ZERO);
        assert_eq!(rouge_l(&[], &toks("c d")), RougeScore::ZERO);
    }

    #[test]
    fn lcs_hand_case_two_thirds() {
        let s = rouge_l(&toks("a c b"), &toks("a b c"));
        for v in [s.precision, s.recall, s.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    /// Count clipped n-gram overlap by direct nested scanning, no hash maps.
    fn oracle_rouge_n(cand: &[String], rf: &[String], n: usize) -> RougeScore {
        if cand.len() < n || rf.len() < n {
            return RougeScore::ZERO;
        }
        let cgrams: Vec<&[String]> = cand.windows(n).collect();
        let rgrams: Vec<&[String]> = rf.windows(n).collect();
        let mut overlap = 0usize;
        let mut seen: Vec<&[String]> = Vec::new();
        for g in &cgrams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let c = cgrams.iter().filter(|x| x == &g).count();
            let r = rgrams.iter().filter(|x| x == &g).count();
            overlap += c.min(r);
        }
        RougeScore::from_counts(overlap as f64, cgrams.len() as f64, rgrams.len() as f64)
    }

    /// Memoized recursive LCS — a different algorithm from the iterative
    /// rolling-array version under test.
    fn oracle_lcs(a: &[String], b: &[String]) -> usize {
        fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if i == a.len() || j == b.len() {
                return 0;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let v = if a[i] == b[j] {
                1 + go(a, b, i + 1, j + 1, memo)
            } else {
                go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
            };
            memo.insert((i, j), v);
            v
        }
        go(a, b, 0, 0, &mut HashMap::new())
    }

    /// Exhaustive LCS over all 2^|a| candidate subsequences (tiny inputs).
    fn exhaustive_lcs(a: &[String], b: &[String]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            if sub.len() <= best {
                continue;
            }
            let mut it = b.iter();
            if sub.iter().all(|s| it.any(|x| &x == s)) {
                best = sub.len();
            }
        }
        best
    }

    fn arb_tokens(max_len: usize) -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            proptest::sample::select(vec!["a", "b", "c", "d", "e", "f"]),
            0..=max_len,
        )
        .prop_map(|v| v.into_iter().map(|s| s.to_string()).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn rouge_matches_brute_force(cand in arb_tokens(20), rf in arb_tokens(20)) {
            for n in [1usize, 2] {
                let got = rouge_n(&cand, &rf, n);
                let want = oracle_rouge_n(&cand, &rf, n);
                prop_assert!((got.precision - want.precision).abs() < 1e-9);
                prop_assert!((got.recall - want.recall).abs() < 1e-9);
                prop_assert!((got.f1 - want.f1).abs() < 1e-9);
            }
            let got = rouge_l(&cand, &rf).recall;
            let lcs = oracle_lcs(&cand, &rf);
            if !rf.is_empty() {
                prop_assert!((got - lcs as f64 / rf.len() as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn lcs_matches_exhaustive_subsequence_search(cand in arb_tokens(9), rf in arb_tokens(9)) {
            prop_assert_eq!(lcs_length(&cand, &rf), exhaustive_lcs(&cand, &rf));
        }

        #[test]
        fn t_test_p_values_stay_in_range_and_antisymmetric(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30),
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let ab = paired_t_test(&a, &b).unwrap();
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab.p));
            prop_assert!((ab.t + ba.t).abs() < 1e-9 || (ab.t.is_infinite() && ba.t.is_infinite()));
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_mean_of_perfect_and_zero_is_fifty() {
        let system = vec![
            ("r1".to_string(), toks("no acute disease")),
            ("r2".to_string(), toks("x y z")),
        ];
        let reference = vec![
            ("r1".to_string(), toks("no acute disease")),
            ("r2".to_string(), toks("a b c")),
        ];
        let c = corpus_rouge(&system, &reference).unwrap();
        assert!((c.rg1.f1 - 50.0).abs() < 1e-9);
        assert!((c.rgl.f1 - 50.0).abs() < 1e-9);
    }

    #[test]
    fn single_report_corpus_equals_per_report_score() {
        let system = vec![("r1".to_string(), toks("the cat sat"))];
        let reference = vec![("r1".to_string(), toks("the cat"))];
        let c = corpus_rouge(&system, &reference).unwrap();
        assert!((c.rg1.f1 - 80.0).abs() < 1e-9);
        assert_eq!(c.per_report.len(), 1);
        assert!((c.per_report[0].rg1.f1 - 80.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_mean_matches_per_pair_oracle_on_random_pairs() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(404);
        let alphabet = ["a", "b", "c", "d", "e"];
        let mut system = Vec::new();
        let mut reference = Vec::new();
        for i in 0..100 {
            let draw = |rng: &mut rand_chacha::ChaCha20Rng| -> Vec<String> {
                let len = rng.random_range(0..=20);
                (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string()).collect()
            };
            system.push((format!("r{i}"), draw(&mut rng)));
            reference.push((format!("r{i}"), draw(&mut rng)));
        }
        let c = corpus_rouge(&system, &reference).unwrap();
        let oracle_mean: f64 = system
            .iter()
            .zip(&reference)
            .map(|((_, s), (_, r))| oracle_rouge_n(s, r, 1).f1 * 100.0)
            .sum::<f64>()
            / 100.0;
        assert!((c.rg1.f1 - oracle_mean).abs() < 1e-9);
    }

    #[test]
    fn misaligned_ids_are_rejected() {
        let system = vec![("r1".to_string(), toks("a"))];
        let reference = vec![("r2".to_string(), toks("a"))];
        let err = corpus_rouge(&system, &reference).unwrap_err().to_string();
        assert!(err.contains("r1") && err.contains("r2"), "error was: {err}");
        let err = corpus_rouge(&system, &[]).unwrap_err().to_string();
        assert!(err.contains('0'), "error was: {err}");
    }

    #[test]
    fn t_test_matches_frozen_oracle() {
        // d = [1,2,3,4,5]: t and p computed independently ahead of time
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 4.242640687119285).abs() < 1e-12, "t = {}", r.t);
        assert!((r.p - 0.013235599563682695).abs() < 1e-12, "p = {}", r.p);
        assert_eq!(r.df, 4.0);
    }

    #[test]
    fn t_test_p_matches_direct_tail_quadrature() {
        // independent oracle: integrate the t density for df = 4, where the
        // normalizing constant is Γ(2.5)/(√(4π)·Γ(2)) = 3/8
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&a, &b).unwrap();
        let pdf = |x: f64| 0.375 * (1.0 + x * x / 4.0).powf(-2.5);
        let (lo, hi, steps) = (r.t.abs(), 400.0, 4_000_000usize);
        let h = (hi - lo) / steps as f64;
        let mut tail = pdf(lo) + pdf(hi);
        for k in 1..steps {
            let x = lo + k as f64 * h;
            tail += if k % 2 == 1 { 4.0 * pdf(x) } else { 2.0 * pdf(x) };
        }
        tail *= h / 3.0;
        assert!((r.p - 2.0 * tail).abs() < 1e-9, "p {} vs quadrature {}", r.p, 2.0 * tail);
    }

    #[test]
    fn t_test_degenerate_conventions() {
        let x = [1.0, 2.0, 3.0];
        let r = paired_t_test(&x, &x).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));

        // mean-zero differences: d = [1,-1,1,-1]
        let a = [2.0, 1.0, 2.0, 1.0];
        let b = [1.0, 2.0, 1.0, 2.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);

        // constant nonzero differences
        let a = [2.0, 3.0, 4.0];
        let b = [1.0, 2.0, 3.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.t.is_infinite() && r.t > 0.0);
        assert_eq!(r.p, 0.0);

        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn fake_summary(rows: Vec<Vec<f64>>, tokens: &str) -> GeneratedSummary {
        GeneratedSummary {
            id: "s-0".to_string(),
            text: String::new(),
            log_prob: 0.0,
            score: 0.0,
            source_tokens: toks(tokens),
            concept_tokens: vec![],
            src_attention: rows,
            onto_attention: vec![],
        }
    }

    fn trace_fixture() -> (Model, Ontology) {
        use crate::corpus::Vocabulary;
        use crate::model::{MatcherKind, ModelConfig};
        let cfg = ModelConfig {
            embed_dim: 6,
            enc_hidden: 4,
            enc_layers: 1,
            dec_hidden: 8,
            findings_cap: 20,
            impression_cap: 10,
            dropout: 0.0,
            ontology: true,
            matcher: MatcherKind::Exact,
            min_depth: 8,
            jaccard: 0.7,
            window: 3,
        };
        let vocab = Vocabulary::from_tokens(["the", "liver", "is", "normal"], 1, 100);
        let model = Model::new(cfg, vocab, 2, None).unwrap();
        (model, crate::synthetic::synthetic_ontology())
    }

    #[test]
    fn single_step_trace_equals_that_row() {
        let (model, ontology) = trace_fixture();
        let row = vec![0.5, 0.25, 0.125, 0.125];
        let s = fake_summary(vec![row.clone()], "the liver is normal");
        let t = attention_trace(&model, &ontology, &s).unwrap();
        assert_eq!(t.mean_attention, row);
        assert_eq!(t.steps, 1);
        // "liver" sits in an exact concept span at the configured depth
        assert_eq!(t.matched, vec![false, true, false, false]);
    }

    #[test]
    fn trace_averages_rows_and_validates_sums() {
        let (model, ontology) = trace_fixture();
        let s = fake_summary(
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
            "the liver is normal",
        );
        let t = attention_trace(&model, &ontology, &s).unwrap();
        assert_eq!(t.mean_attention, vec![0.5, 0.5, 0.0, 0.0]);

        let bad = fake_summary(vec![vec![0.7, 0.1, 0.1, 0.0]], "the liver is normal");
        let err = attention_trace(&model, &ontology, &bad).unwrap_err().to_string();
        assert!(err.contains("sums to"), "error was: {err}");

        let empty = fake_summary(vec![], "the liver is normal");
        assert!(attention_trace(&model, &ontology, &empty).is_err());
    }

    #[test]
    fn tsv_rendering_has_header_and_flags() {
        let (model, ontology) = trace_fixture();
        let s = fake_summary(vec![vec![0.25; 4]], "the liver is normal");
        let t = attention_trace(&model, &ontology, &s).unwrap();
        let tsv = attention_tsv(&t);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "token\tmean_attention\tconcept_match");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("liver\t0.250000\t1"));
    }

    #[test]
    fn trained_copy_model_attends_to_matched_tokens() {
        // a corpus where the summary is a concept term that varies per report
        // and is deliberately excluded from the model vocabulary: the only way
        // to emit it is to copy it, which requires attending to its source
        // position. After training, mean attention mass on concept-matched
        // tokens must exceed those tokens' frequency share.
        use crate::corpus::{Report, Vocabulary};
        use crate::decoding::{summarize_report, DecodeConfig};
        use crate::model::{MatcherKind, Mode, ModelConfig};
        use crate::training::{adam_step, TrainConfig, TrainState};

        let ontology = crate::synthetic::synthetic_ontology();
        let terms = ["hip", "liver", "spleen", "kidney", "effusion", "pelvis"];
        let reports: Vec<Report> = terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Report::new(
                    format!("a-{i}"),
                    format!("the scan shows {t} today ."),
                    Some(format!("{t} .")),
                )
            })
            .collect();
        // glue words only — every concept term is out of vocabulary
        let vocab = Vocabulary::from_tokens(
            ["the", "scan", "shows", "today", "."].iter().map(|s| s.to_string()),
            1,
            100,
        );
        let cfg = ModelConfig {
            embed_dim: 8,
            enc_hidden: 6,
            enc_layers: 1,
            dec_hidden: 12,
            findings_cap: 30,
            impression_cap: 10,
            dropout: 0.0,
            ontology: true,
            matcher: MatcherKind::Exact,
            min_depth: 8,
            jaccard: 0.7,
            window: 3,
        };
        let mut model = Model::new(cfg, vocab, 17, None).unwrap();
        let us: Vec<_> = reports
            .iter()
            .map(|r| model.derive_u(&ontology, &r.findings_tokens).unwrap())
            .collect();
        let tcfg = TrainConfig { learning_rate: 0.01, dropout: 0.0, ..Default::default() };
        let mut state = TrainState::new(&model.params);
        for _ in 0..150 {
            model.params.zero_grads();
            for (r, u) in reports.iter().zip(&us) {
                let mut fp = model.forward_teacher_forced(r, u, Mode::Eval).unwrap();
                fp.backward().unwrap();
                fp.accumulate_grads(&mut model.params).unwrap();
            }
            model.params.scale_grads(1.0 / reports.len() as f64);
            adam_step(&mut model.params, &mut state, &tcfg).unwrap();
        }
        let summary = summarize_report(
            &model,
            &ontology,
            &reports[0],
            &DecodeConfig { beam: 3, max_len: 10, ..Default::default() },
        )
        .unwrap();
        assert!(summary.text.contains("hip"), "copy failed: generated '{}'", summary.text);
        let trace = attention_trace(&model, &ontology, &summary).unwrap();
        let matched_mass: f64 = trace
            .mean_attention
            .iter()
            .zip(&trace.matched)
            .filter(|(_, m)| **m)
            .map(|(w, _)| w)
            .sum();
        let matched_share =
            trace.matched.iter().filter(|m| **m).count() as f64 / trace.matched.len() as f64;
        assert!(
            matched_mass > matched_share,
            "matched attention mass {matched_mass:.4} vs frequency share {matched_share:.4}"
        );
    }
}
