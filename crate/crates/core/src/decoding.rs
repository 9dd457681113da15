//! Beam-search generation: expand every live hypothesis each step, keep the
//! best `beam` by cumulative log-probability, set finished hypotheses aside,
//! and rank the finished pool by (optionally length-normalized) score.

use crate::corpus::{Report, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{DecState, InferenceSession, Model, StepValues};
use crate::ontology::Ontology;

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Rank finished hypotheses by logP/length instead of raw logP.
    pub length_normalize: bool,
    /// Refuse expansions that would repeat a trigram already generated.
    pub block_trigrams: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 5, max_len: 100, length_normalize: true, block_trigrams: false }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::config("beam", "must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        Ok(())
    }
}

/// A (possibly finished) decoded sequence. Token ids live in the extended
/// vocabulary, so copied out-of-vocabulary source tokens keep their surface
/// identity. When the sequence ended at EOS, the EOS id is the last token.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub src_attention: Vec<Vec<f64>>,
    pub onto_attention: Vec<Vec<f64>>,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, length_normalize: bool) -> f64 {
        if length_normalize {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }
}

/// Anything that can advance a decoder state one token at a time. The model's
/// incremental inference session is the production implementation; tests use
/// hand-built probability tables.
pub trait StepDecoder {
    type State: Clone;
    fn initial_state(&self) -> Self::State;
    /// Size of the distribution every step returns.
    fn vocab_len(&self) -> usize;
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, StepValues)>;
}

impl<'m> StepDecoder for InferenceSession<'m> {
    type State = DecState;

    fn initial_state(&self) -> DecState {
        InferenceSession::initial_state(self)
    }

    fn vocab_len(&self) -> usize {
        self.ext_len()
    }

    fn step(&mut self, state: &DecState, prev: usize) -> Result<(DecState, StepValues)> {
        InferenceSession::step(self, state, prev)
    }
}

struct Live<S> {
    state: S,
    tokens: Vec<usize>,
    log_prob: f64,
    src_attention: Vec<Vec<f64>>,
    onto_attention: Vec<Vec<f64>>,
}

/// One step's retained candidate, in retention order; exposed to tests so the
/// per-step top-k selection can be replayed against a brute-force sort.
#[cfg(test)]
pub(crate) struct RetainedStep {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

fn would_repeat_trigram(tokens: &[usize], next: usize) -> bool {
    if tokens.len() < 2 {
        return false;
    }
    let (a, b) = (tokens[tokens.len() - 2], tokens[tokens.len() - 1]);
    tokens.windows(3).any(|w| w[0] == a && w[1] == b && w[2] == next)
}

pub fn beam_search<D: StepDecoder>(decoder: &mut D, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    beam_search_inner(decoder, cfg, &mut |_| {})
}

#[cfg(test)]
pub(crate) fn beam_search_traced<D: StepDecoder>(
    decoder: &mut D,
    cfg: &DecodeConfig,
) -> Result<(Vec<Hypothesis>, Vec<Vec<RetainedStep>>)> {
    let mut trace = Vec::new();
    let hyps = beam_search_inner(decoder, cfg, &mut |retained: &[(&Live<D::State>, usize, f64)]| {
        trace.push(
            retained
                .iter()
                .map(|(parent, tok, lp)| {
                    let mut tokens = parent.tokens.clone();
                    tokens.push(*tok);
                    RetainedStep { tokens, log_prob: *lp, finished: *tok == EOS }
                })
                .collect(),
        );
    })?;
    Ok((hyps, trace))
}

fn beam_search_inner<D: StepDecoder>(
    decoder: &mut D,
    cfg: &DecodeConfig,
    observe: &mut dyn FnMut(&[(&Live<D::State>, usize, f64)]),
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let mut live: Vec<Live<D::State>> = vec![Live {
        state: decoder.initial_state(),
        tokens: Vec::new(),
        log_prob: 0.0,
        src_attention: Vec::new(),
        onto_attention: Vec::new(),
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        // advance every live hypothesis once, then gather (parent, token)
        // expansion candidates — each parent only needs its own top `beam`
        // children, because a child ranked below them can never reach the
        // global top `beam`
        let mut advanced: Vec<(D::State, StepValues)> = Vec::with_capacity(live.len());
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            advanced.push(decoder.step(&h.state, prev)?);
        }
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (pi, (h, (_, vals))) in live.iter().zip(&advanced).enumerate() {
            if vals.log_probs.len() != decoder.vocab_len() {
                return Err(Error::contract(format!(
                    "step produced {} log-probabilities for a vocabulary of {}",
                    vals.log_probs.len(),
                    decoder.vocab_len()
                )));
            }
            let mut children: Vec<(usize, usize, f64)> = vals
                .log_probs
                .iter()
                .enumerate()
                .filter(|(w, lp)| {
                    lp.is_finite() && !(cfg.block_trigrams && *w != EOS && would_repeat_trigram(&h.tokens, *w))
                })
                .map(|(w, lp)| (pi, w, h.log_prob + lp))
                .collect();
            children.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)));
            children.truncate(cfg.beam);
            candidates.extend(children);
        }
        // global top `beam` by cumulative logP; ties go to the
        // lexicographically lower token-id sequence
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then_with(|| (&live[a.0].tokens, a.1).cmp(&(&live[b.0].tokens, b.1)))
        });
        candidates.truncate(cfg.beam);
        observe(
            &candidates
                .iter()
                .map(|&(pi, w, lp)| (&live[pi], w, lp))
                .collect::<Vec<_>>(),
        );

        let mut next_live: Vec<Live<D::State>> = Vec::with_capacity(candidates.len());
        for &(pi, w, lp) in &candidates {
            let parent = &live[pi];
            let (state, vals) = &advanced[pi];
            let mut tokens = parent.tokens.clone();
            tokens.push(w);
            let mut src_attention = parent.src_attention.clone();
            src_attention.push(vals.src_attention.clone());
            let mut onto_attention = parent.onto_attention.clone();
            if !vals.onto_attention.is_empty() {
                onto_attention.push(vals.onto_attention.clone());
            }
            if w == EOS {
                pool.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    src_attention,
                    onto_attention,
                    finished: true,
                });
            } else {
                next_live.push(Live {
                    state: state.clone(),
                    tokens,
                    log_prob: lp,
                    src_attention,
                    onto_attention,
                });
            }
        }
        live = next_live;
    }
    // anything still alive hit the length cap
    for h in live {
        pool.push(Hypothesis {
            tokens: h.tokens,
            log_prob: h.log_prob,
            src_attention: h.src_attention,
            onto_attention: h.onto_attention,
            finished: true,
        });
    }
    pool.sort_by(|a, b| {
        b.score(cfg.length_normalize)
            .partial_cmp(&a.score(cfg.length_normalize))
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    pool.truncate(cfg.beam);
    if pool.is_empty() {
        return Err(Error::contract("beam search produced no finished hypotheses"));
    }
    Ok(pool)
}

/// Render decoded ids as text: space-joined surface forms with PAD/BOS/EOS
/// stripped; copied out-of-vocabulary ids render their source surface form.
pub fn detokenize(
    ids: &[usize],
    vocab: &Vocabulary,
    ext: &crate::corpus::ExtendedVocabulary,
) -> Result<String> {
    let mut out: Vec<&str> = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == PAD || id == BOS || id == EOS {
            continue;
        }
        match ext.token_of(vocab, id) {
            Some(t) => out.push(t),
            None => {
                return Err(Error::contract(format!(
                    "token id {id} outside extended vocabulary of {}",
                    ext.len()
                )))
            }
        }
    }
    Ok(out.join(" "))
}

/// A decoded impression for one report, with everything downstream consumers
/// need: surface text, score, and the per-step attention rows.
#[derive(Debug, Clone)]
pub struct GeneratedSummary {
    pub id: String,
    pub text: String,
    pub log_prob: f64,
    pub score: f64,
    pub source_tokens: Vec<String>,
    pub concept_tokens: Vec<String>,
    pub src_attention: Vec<Vec<f64>>,
    pub onto_attention: Vec<Vec<f64>>,
}

/// Run beam search over one report's findings and return the best hypothesis.
pub fn summarize_report(
    model: &Model,
    ontology: &Ontology,
    report: &Report,
    cfg: &DecodeConfig,
) -> Result<GeneratedSummary> {
    let n = report.findings_tokens.len().min(model.config.findings_cap);
    let src = &report.findings_tokens[..n];
    let u = model.derive_u(ontology, src)?;
    let mut session = model.infer_session(src, &u)?;
    let hyps = beam_search(&mut session, cfg)?;
    let best = &hyps[0];
    let text = detokenize(&best.tokens, session.vocab(), &session.ext)?;
    Ok(GeneratedSummary {
        id: report.id.clone(),
        text,
        log_prob: best.log_prob,
        score: best.score(cfg.length_normalize),
        source_tokens: src.to_vec(),
        concept_tokens: u.tokens.clone(),
        src_attention: best.src_attention.clone(),
        onto_attention: best.onto_attention.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ExtendedVocabulary;
    use crate::model::{MatcherKind, ModelConfig};
    use crate::synthetic::synthetic_ontology;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Decoder defined by an explicit table prefix → probability row; ids not
    /// present in the table get probability zero.
    struct TableDecoder {
        rows: HashMap<Vec<usize>, Vec<f64>>,
        vocab: usize,
    }

    impl TableDecoder {
        fn new(vocab: usize, rows: &[(&[usize], &[(usize, f64)])]) -> Self {
            let map = rows
                .iter()
                .map(|(prefix, entries)| {
                    let mut row = vec![0.0; vocab];
                    for &(id, p) in *entries {
                        row[id] = p;
                    }
                    (prefix.to_vec(), row)
                })
                .collect();
            TableDecoder { rows: map, vocab }
        }
    }

    impl StepDecoder for TableDecoder {
        type State = Vec<usize>;

        fn initial_state(&self) -> Vec<usize> {
            Vec::new()
        }

        fn vocab_len(&self) -> usize {
            self.vocab
        }

        fn step(&mut self, state: &Vec<usize>, prev: usize) -> Result<(Vec<usize>, StepValues)> {
            let mut next = state.clone();
            if !(next.is_empty() && prev == BOS) {
                next.push(prev);
            }
            let row = self
                .rows
                .get(&next)
                .cloned()
                .unwrap_or_else(|| vec![0.0; self.vocab]);
            Ok((
                next.clone(),
                StepValues {
                    log_probs: row.iter().map(|p| p.ln()).collect(),
                    src_attention: vec![1.0],
                    onto_attention: Vec::new(),
                    p_gen: 0.5,
                },
            ))
        }
    }

    const A: usize = 5;
    const B: usize = 6;
    const C: usize = 7;
    const D: usize = 8;

    /// A table where greedy commits to the locally best first token but a
    /// beam of 2 finds a strictly better finished sequence.
    fn counterexample_table() -> TableDecoder {
        TableDecoder::new(
            9,
            &[
                (&[][..], &[(A, 0.55), (B, 0.45)][..]),
                (&[A][..], &[(C, 0.5), (B, 0.3), (EOS, 0.2)][..]),
                (&[B][..], &[(D, 0.8), (EOS, 0.2)][..]),
                (&[A, C][..], &[(EOS, 0.2984), (A, 0.35), (B, 0.35)][..]),
                (&[A, B][..], &[(EOS, 0.5), (A, 0.5)][..]),
                (&[B, D][..], &[(EOS, 0.42), (A, 0.29), (C, 0.29)][..]),
            ],
        )
    }

    /// Independent stepwise-argmax decoder (ties to the lowest id).
    fn greedy_reference<Dec: StepDecoder>(decoder: &mut Dec, max_len: usize) -> Vec<usize> {
        let mut state = decoder.initial_state();
        let mut tokens = Vec::new();
        for _ in 0..max_len {
            let prev = tokens.last().copied().unwrap_or(BOS);
            let (next, vals) = decoder.step(&state, prev).unwrap();
            let mut best = 0usize;
            for (w, lp) in vals.log_probs.iter().enumerate() {
                if *lp > vals.log_probs[best] {
                    best = w;
                }
            }
            state = next;
            tokens.push(best);
            if best == EOS {
                break;
            }
        }
        tokens
    }

    /// All finished sequences reachable in the table within the length cap,
    /// paired with their cumulative log-probabilities.
    fn enumerate_finished(
        table: &TableDecoder,
        max_len: usize,
    ) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        let mut frontier: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
        for depth in 0..max_len {
            let mut next = Vec::new();
            for (prefix, lp) in frontier {
                let row = match table.rows.get(&prefix) {
                    Some(r) => r.clone(),
                    None => vec![0.0; table.vocab],
                };
                for (w, &p) in row.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let mut seq = prefix.clone();
                    seq.push(w);
                    let nlp = lp + p.ln();
                    if w == EOS || depth + 1 == max_len {
                        out.push((seq, nlp));
                    } else {
                        next.push((seq, nlp));
                    }
                }
            }
            frontier = next;
        }
        out
    }

    fn tiny_model(seed: u64) -> crate::model::Model {
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
        let vocab = Vocabulary::from_tokens(
            ["the", "liver", "is", "normal", "no", "effusion", ".", "there", "seen"],
            1,
            10_000,
        );
        crate::model::Model::new(cfg, vocab, seed, None).unwrap()
    }

    #[test]
    fn eos_probability_one_gives_empty_summary() {
        let mut dec = TableDecoder::new(9, &[(&[][..], &[(EOS, 1.0)][..])]);
        let hyps = beam_search(&mut dec, &DecodeConfig::default()).unwrap();
        assert_eq!(hyps[0].tokens, vec![EOS]);
        assert_eq!(hyps[0].log_prob, 0.0);
        let vocab = Vocabulary::from_tokens(["x"], 1, 10);
        let ext = ExtendedVocabulary::from_source(&vocab, &[]);
        assert_eq!(detokenize(&hyps[0].tokens, &vocab, &ext).unwrap(), "");
    }

    #[test]
    fn beam_two_finds_the_better_non_greedy_path() {
        let cfg = DecodeConfig { beam: 2, max_len: 3, ..Default::default() };
        let mut dec = counterexample_table();
        let greedy = greedy_reference(&mut dec, 3);
        assert_eq!(greedy, vec![A, C, A], "greedy should chase the 0.55 branch");

        let hyps = beam_search(&mut counterexample_table(), &cfg).unwrap();
        let expected_lp = 0.45f64.ln() + 0.8f64.ln() + 0.42f64.ln();
        assert_eq!(hyps[0].tokens, vec![B, D, EOS]);
        assert!((hyps[0].log_prob - expected_lp).abs() < 1e-12);
        assert!((expected_lp - (-1.889)).abs() < 0.01);

        // raw-logP ranking picks the same winner here
        let cfg_raw = DecodeConfig { length_normalize: false, ..cfg };
        let hyps = beam_search(&mut counterexample_table(), &cfg_raw).unwrap();
        assert_eq!(hyps[0].tokens, vec![B, D, EOS]);
    }

    #[test]
    fn exhaustive_beam_matches_brute_force_enumeration() {
        // with the beam wider than the whole search tree, beam search must
        // return exactly the brute-force best finished sequence
        let table = counterexample_table;
        let cfg = DecodeConfig { beam: 1000, max_len: 3, length_normalize: true, block_trigrams: false };
        let hyps = beam_search(&mut table(), &cfg).unwrap();
        let mut all = enumerate_finished(&table(), cfg.max_len);
        all.sort_by(|a, b| {
            let sa = a.1 / a.0.len() as f64;
            let sb = b.1 / b.0.len() as f64;
            sb.partial_cmp(&sa).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        assert_eq!(hyps[0].tokens, all[0].0);
        assert!((hyps[0].log_prob - all[0].1).abs() < 1e-12);
        // and the whole returned ranking must agree with the brute-force one
        for (h, (seq, lp)) in hyps.iter().zip(&all) {
            assert_eq!(&h.tokens, seq);
            assert!((h.log_prob - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn retained_sets_are_the_per_step_top_k() {
        let cfg = DecodeConfig { beam: 2, max_len: 3, ..Default::default() };
        let (_, trace) = beam_search_traced(&mut counterexample_table(), &cfg).unwrap();
        // replay: at each step the retained scores must be the top-k of all
        // expansions of the previously retained live set
        let table = counterexample_table();
        let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
        for step in &trace {
            assert!(step.len() <= cfg.beam);
            let mut pool: Vec<(Vec<usize>, f64)> = Vec::new();
            for (prefix, lp) in &live {
                let row = match table.rows.get(prefix) {
                    Some(r) => r.clone(),
                    None => vec![0.0; table.vocab],
                };
                for (w, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        let mut seq = prefix.clone();
                        seq.push(w);
                        pool.push((seq, lp + p.ln()));
                    }
                }
            }
            pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            pool.truncate(cfg.beam);
            let got: Vec<f64> = step.iter().map(|r| r.log_prob).collect();
            let want: Vec<f64> = pool.iter().map(|p| p.1).collect();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "retained {got:?} vs brute force {want:?}");
            }
            live = step
                .iter()
                .filter(|r| !r.finished)
                .map(|r| (r.tokens.clone(), r.log_prob))
                .collect();
        }
    }

    #[test]
    fn beam_one_equals_greedy_on_random_models() {
        let ontology = synthetic_ontology();
        let report = Report::new(
            "g-0",
            "there is no effusion . the liver is normal .",
            Some("no effusion .".to_string()),
        );
        let cfg = DecodeConfig { beam: 1, max_len: 8, ..Default::default() };
        for seed in 0..50 {
            let model = tiny_model(seed);
            let n = report.findings_tokens.len().min(model.config.findings_cap);
            let u = model.derive_u(&ontology, &report.findings_tokens[..n]).unwrap();

            let mut s1 = model.infer_session(&report.findings_tokens[..n], &u).unwrap();
            let beam_tokens = beam_search(&mut s1, &cfg).unwrap()[0].tokens.clone();

            let mut s2 = model.infer_session(&report.findings_tokens[..n], &u).unwrap();
            let greedy_tokens = greedy_reference(&mut s2, cfg.max_len);
            assert_eq!(beam_tokens, greedy_tokens, "seed {seed}");
        }
    }

    #[test]
    fn summaries_respect_the_length_cap_and_attention_shapes() {
        let ontology = synthetic_ontology();
        let model = tiny_model(3);
        let report = Report::new(
            "c-0",
            "the liver is normal . no effusion seen .",
            Some("normal liver .".to_string()),
        );
        for max_len in [1, 2, 5] {
            let cfg = DecodeConfig { beam: 3, max_len, ..Default::default() };
            let out = summarize_report(&model, &ontology, &report, &cfg).unwrap();
            let n_steps = out.src_attention.len();
            assert!(n_steps <= max_len);
            for row in &out.src_attention {
                assert_eq!(row.len(), out.source_tokens.len());
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            for row in &out.onto_attention {
                assert_eq!(row.len(), out.concept_tokens.len());
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn repeated_calls_are_identical() {
        let ontology = synthetic_ontology();
        let model = tiny_model(9);
        let report = Report::new(
            "d-0",
            "the liver is normal . no effusion seen .",
            Some("normal liver .".to_string()),
        );
        let cfg = DecodeConfig { beam: 4, max_len: 10, ..Default::default() };
        let a = summarize_report(&model, &ontology, &report, &cfg).unwrap();
        let b = summarize_report(&model, &ontology, &report, &cfg).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.log_prob.to_bits(), b.log_prob.to_bits());
    }

    #[test]
    fn trigram_blocking_breaks_repetition_loops() {
        // a table that strictly repeats "a b c a b c ..." forever unless blocked
        let loop_rows: Vec<(&[usize], &[(usize, f64)])> = vec![
            (&[], &[(A, 1.0)]),
            (&[A], &[(B, 1.0)]),
            (&[A, B], &[(C, 1.0)]),
            (&[A, B, C], &[(A, 0.9), (EOS, 0.1)]),
            (&[A, B, C, A], &[(B, 0.9), (EOS, 0.1)]),
            (&[A, B, C, A, B], &[(C, 0.9), (EOS, 0.1)]),
            (&[A, B, C, A, B, C], &[(A, 0.9), (EOS, 0.1)]),
            (&[A, B, C, A, B, C, A], &[(B, 0.9), (EOS, 0.1)]),
        ];
        let cfg = DecodeConfig { beam: 1, max_len: 8, length_normalize: false, block_trigrams: false };
        let unblocked = beam_search(&mut TableDecoder::new(9, &loop_rows), &cfg).unwrap();
        assert_eq!(unblocked[0].tokens.len(), 8, "loop should hit the cap");

        let blocked_cfg = DecodeConfig { block_trigrams: true, ..cfg };
        let blocked = beam_search(&mut TableDecoder::new(9, &loop_rows), &blocked_cfg).unwrap();
        // after a b c a b, emitting c would repeat the trigram (a,b,c); the
        // only unblocked continuation is EOS
        assert_eq!(blocked[0].tokens, vec![A, B, C, A, B, EOS]);
    }

    #[test]
    fn detokenize_renders_copied_oov_surface_forms() {
        let vocab = Vocabulary::from_tokens(["patent", "tips"], 1, 10);
        let src = crate::corpus::tokenize("thoracolumbar patent");
        let ext = ExtendedVocabulary::from_source(&vocab, &src);
        let oov_id = ext.id_of(&vocab, "thoracolumbar");
        assert!(oov_id >= vocab.len());
        let ids = vec![
            vocab.id_of("patent"),
            vocab.id_of("tips"),
            oov_id,
            EOS,
        ];
        assert_eq!(detokenize(&ids, &vocab, &ext).unwrap(), "patent tips thoracolumbar");
        assert!(detokenize(&[ext.len()], &vocab, &ext).is_err());
        assert_eq!(detokenize(&[], &vocab, &ext).unwrap(), "");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn outputs_are_capped_finished_and_monotone(
            seed in 0u64..1000,
            beam in 1usize..5,
            max_len in 1usize..5,
        ) {
            // random probability tables over a 4-word vocabulary
            use rand::{RngExt, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let words = [EOS, A, B, C];
            let mut rows: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
            let mut frontier = vec![Vec::new()];
            for _ in 0..max_len {
                let mut next = Vec::new();
                for prefix in frontier {
                    let raw: Vec<f64> = (0..words.len()).map(|_| rng.random_range(0.05..1.0)).collect();
                    let z: f64 = raw.iter().sum();
                    let mut row = vec![0.0; 9];
                    for (w, r) in words.iter().zip(&raw) {
                        row[*w] = r / z;
                    }
                    rows.insert(prefix.clone(), row);
                    for &w in &words[1..] {
                        let mut p = prefix.clone();
                        p.push(w);
                        next.push(p);
                    }
                }
                frontier = next;
            }
            let mut dec = TableDecoder { rows, vocab: 9 };
            let cfg = DecodeConfig { beam, max_len, ..Default::default() };
            let hyps = beam_search(&mut dec, &cfg).unwrap();
            prop_assert!(!hyps.is_empty() && hyps.len() <= beam);
            for h in &hyps {
                prop_assert!(h.finished);
                prop_assert!(h.tokens.len() <= max_len);
                prop_assert!(h.tokens.last() == Some(&EOS) || h.tokens.len() == max_len);
                prop_assert!(h.log_prob <= 1e-12, "logP must be non-positive");
            }
            // ranking is by score, descending
            for w in hyps.windows(2) {
                prop_assert!(
                    w[0].score(cfg.length_normalize) >= w[1].score(cfg.length_normalize) - 1e-12
                );
            }
        }
    }
}
