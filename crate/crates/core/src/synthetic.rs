//! Deterministic synthetic report generator and the small concept hierarchy
//! that ships with the repository for tests and demos.
//!
//! Each generated report embeds a handful of concept surface terms in
//! templated findings prose; the impression restates exactly those terms. A
//! summarizer that locates the matched concepts can therefore solve the task,
//! which is what the end-to-end tests rely on.

use rand::seq::SliceRandom;
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::Report;
use crate::error::{Error, Result};
use crate::ontology::{ConceptRecord, Ontology};

/// Minimum depth at which generated concepts count as concrete entities;
/// matching defaults elsewhere use the same cutoff.
pub const SYNTHETIC_TERM_DEPTH: usize = 8;

const SINGLE_TERMS: &[&str] = &[
    "hip",
    "pelvis",
    "femur",
    "liver",
    "spleen",
    "kidney",
    "pancreas",
    "gallbladder",
    "aorta",
    "bladder",
    "uterus",
    "prostate",
    "colon",
    "stomach",
    "duodenum",
    "esophagus",
    "trachea",
    "heart",
    "sternum",
    "clavicle",
    "scapula",
    "humerus",
    "radius",
    "ulna",
    "tibia",
    "fibula",
    "patella",
    "sacrum",
    "effusion",
    "mandible",
];

const PAIR_TERMS: &[&str] = &[
    "pleural effusion",
    "pericardial effusion",
    "biliary dilatation",
    "bowel obstruction",
    "pulmonary nodule",
    "hiatal hernia",
    "fatty liver",
    "renal cyst",
    "adrenal gland",
    "thyroid lobe",
    "carotid artery",
    "portal vein",
    "bile duct",
    "rib fracture",
    "vertebral body",
    "disc herniation",
    "joint space",
    "soft tissue",
];

/// Synonyms attached to a few concepts so fuzzy matching has material to work
/// with; the generator itself only ever writes preferred terms.
const SYNONYMS: &[(&str, &[&str])] = &[
    ("kidney", &["renal organ"]),
    ("gallbladder", &["cholecyst"]),
    ("pleural effusion", &["pleural fluid"]),
    ("bowel obstruction", &["intestinal obstruction"]),
    ("hip", &["coxa"]),
];

/// Records for the bundled hierarchy: a seven-level abstract spine, a few
/// shallow categories that matching must skip, and concrete terms at depth 8.
pub fn synthetic_ontology_records() -> Vec<ConceptRecord> {
    let spine = [
        "conceptual entity",
        "physical entity",
        "organism part",
        "body region",
        "organ system",
        "organ class",
        "anatomical group",
    ];
    let mut records = Vec::new();
    for (i, term) in spine.iter().enumerate() {
        records.push(ConceptRecord {
            id: format!("A{:02}", i + 1),
            term: term.to_string(),
            synonyms: Vec::new(),
            parent: (i > 0).then(|| format!("A{i:02}")),
        });
    }
    // shallow decoys: real-looking words that must never match at depth >= 8
    for (i, term) in ["shoulder", "abdomen", "thorax"].iter().enumerate() {
        records.push(ConceptRecord {
            id: format!("S{:02}", i + 1),
            term: term.to_string(),
            synonyms: Vec::new(),
            parent: Some("A03".to_string()),
        });
    }
    let synonyms_for = |term: &str| -> Vec<String> {
        SYNONYMS
            .iter()
            .find(|(t, _)| *t == term)
            .map(|(_, syns)| syns.iter().map(|s| s.to_string()).collect())
            .unwrap_or_default()
    };
    let mut idx = 0;
    for term in SINGLE_TERMS.iter().chain(PAIR_TERMS.iter()) {
        idx += 1;
        records.push(ConceptRecord {
            id: format!("T{idx:03}"),
            term: term.to_string(),
            synonyms: synonyms_for(term),
            parent: Some("A07".to_string()),
        });
    }
    records
}

/// The bundled hierarchy as a loaded ontology.
pub fn synthetic_ontology() -> Ontology {
    Ontology::from_records(synthetic_ontology_records())
        .expect("bundled ontology records are well formed")
}

const OPENINGS: &[&[&str]] = &[
    &["comparison", ":", "none", "available", "."],
    &["technique", ":", "standard", "views", "were", "obtained", "."],
    &["indication", ":", "follow", "up", "."],
];

const DISTRACTORS: &[&str] = &[
    "contrast",
    "study",
    "artifact",
    "motion",
    "positioning",
    "window",
    "detail",
    "exposure",
    "penetration",
    "inspiration",
    "rotation",
    "projection",
    "view",
    "film",
    "grid",
    "collimation",
    "alignment",
    "series",
    "overlap",
    "markers",
];

fn mean_findings_target(rng: &mut ChaCha20Rng) -> usize {
    rng.random_range(100..=174)
}

fn push_term_sentence(out: &mut Vec<String>, term: &[String], rng: &mut ChaCha20Rng) {
    let template = rng.random_range(0..5u32);
    let mut s: Vec<String> = Vec::new();
    let push_strs = |s: &mut Vec<String>, words: &[&str]| {
        s.extend(words.iter().map(|w| w.to_string()));
    };
    match template {
        0 => {
            push_strs(&mut s, &["the"]);
            s.extend_from_slice(term);
            push_strs(&mut s, &["is", "unremarkable", "."]);
        }
        1 => {
            push_strs(&mut s, &["there", "is", "evidence", "of"]);
            s.extend_from_slice(term);
            push_strs(&mut s, &["."]);
        }
        2 => {
            let measure = format!("{}.{}", rng.random_range(0..=9), rng.random_range(1..=9));
            push_strs(&mut s, &["the"]);
            s.extend_from_slice(term);
            push_strs(&mut s, &["measures", &measure, "cm", "."]);
        }
        3 => {
            push_strs(&mut s, &["no", "acute", "abnormality", "of", "the"]);
            s.extend_from_slice(term);
            push_strs(&mut s, &["is", "seen", "."]);
        }
        _ => {
            push_strs(&mut s, &["the"]);
            s.extend_from_slice(term);
            push_strs(&mut s, &["appears", "normal", "."]);
        }
    }
    out.extend(s);
}

fn push_filler_sentence(out: &mut Vec<String>, rng: &mut ChaCha20Rng) {
    let d1 = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())];
    let d2 = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())];
    let template = rng.random_range(0..5u32);
    let words: Vec<&str> = match template {
        0 => vec!["the", d1, "is", "stable", "."],
        1 => vec!["no", "significant", d1, "is", "seen", "."],
        2 => vec!["the", d1, "and", d2, "are", "unremarkable", "."],
        3 => vec!["there", "is", "no", "acute", d1, "."],
        _ => vec!["mild", d1, "is", "noted", "."],
    };
    out.extend(words.iter().map(|w| w.to_string()));
}

/// Concrete surface terms (preferred terms of concepts at the term depth),
/// in concept-id order so sampling is deterministic.
fn usable_terms(ontology: &Ontology) -> Vec<Vec<String>> {
    ontology
        .concepts()
        .filter(|c| c.depth >= SYNTHETIC_TERM_DEPTH)
        .map(|c| c.preferred_term.clone())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Generate `n_reports` templated reports. Deterministic in `seed`.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_reports: usize,
    ontology: &Ontology,
) -> Result<Vec<Report>> {
    if ontology.is_empty() {
        return Err(Error::contract("synthetic generation needs a nonempty ontology"));
    }
    if n_reports == 0 {
        return Err(Error::contract("n_reports must be at least 1"));
    }
    let terms = usable_terms(ontology);
    if terms.len() < 6 {
        return Err(Error::contract(format!(
            "ontology has only {} concrete terms at depth >= {}; need at least 6",
            terms.len(),
            SYNTHETIC_TERM_DEPTH
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(n_reports);
    for i in 0..n_reports {
        let k = rng.random_range(2..=6usize);
        let chosen = rand::seq::index::sample(&mut rng, terms.len(), k);
        let report_terms: Vec<&Vec<String>> = chosen.iter().map(|j| &terms[j]).collect();

        // sentences: term-bearing ones first, then filler up to a target
        // length, then shuffled so term position is unpredictable
        let target = mean_findings_target(&mut rng);
        let opening: Vec<String> = OPENINGS[rng.random_range(0..OPENINGS.len())]
            .iter()
            .map(|w| w.to_string())
            .collect();
        let mut sentences: Vec<Vec<String>> = Vec::new();
        for term in &report_terms {
            let mut s = Vec::new();
            push_term_sentence(&mut s, term, &mut rng);
            sentences.push(s);
        }
        let mut len_so_far: usize =
            opening.len() + sentences.iter().map(|s| s.len()).sum::<usize>();
        while len_so_far < target {
            let mut s = Vec::new();
            push_filler_sentence(&mut s, &mut rng);
            len_so_far += s.len();
            sentences.push(s);
        }
        sentences.shuffle(&mut rng);

        // impression lists the embedded terms in their findings order
        let mut ordered_terms: Vec<&Vec<String>> = Vec::new();
        for s in &sentences {
            for term in &report_terms {
                if !ordered_terms.iter().any(|t| *t == *term) && contains_slice(s, term) {
                    ordered_terms.push(term);
                }
            }
        }
        debug_assert_eq!(ordered_terms.len(), report_terms.len());
        let mut impression: Vec<String> = Vec::new();
        for (j, term) in ordered_terms.iter().enumerate() {
            impression.push((j + 1).to_string());
            impression.push(".".to_string());
            impression.push("there".to_string());
            impression.push("is".to_string());
            impression.extend_from_slice(term);
            impression.push("without".to_string());
            impression.push("interval".to_string());
            impression.push("change".to_string());
            impression.push(".".to_string());
        }

        let mut findings = opening;
        for s in sentences {
            findings.extend(s);
        }
        reports.push(Report::new(
            format!("syn-{i:05}"),
            findings.join(" "),
            Some(impression.join(" ")),
        ));
    }
    Ok(reports)
}

fn contains_slice(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || haystack.len() < needle.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{map_to_ontology_sequence, match_exact};
    use std::collections::BTreeSet;

    #[test]
    fn bundled_ontology_shape() {
        let o = synthetic_ontology();
        assert!(o.len() > 50);
        let max_depth = o.concepts().map(|c| c.depth).max().unwrap();
        assert_eq!(max_depth, 8);
        assert!(max_depth <= 20);
        let deep = o.concepts().filter(|c| c.depth >= 8).count();
        assert_eq!(deep, SINGLE_TERMS.len() + PAIR_TERMS.len());
        let shallow = o.concepts().filter(|c| c.depth < 8).count();
        assert_eq!(shallow, 7 + 3);
    }

    #[test]
    fn glue_and_distractors_disjoint_from_terms() {
        let o = synthetic_ontology();
        let mut term_tokens = BTreeSet::new();
        for c in o.concepts().filter(|c| c.depth >= 8) {
            for term in c.terms() {
                term_tokens.extend(term.iter().cloned());
            }
        }
        for d in DISTRACTORS {
            assert!(!term_tokens.contains(*d), "distractor {d} collides with a term token");
        }
        for glue in [
            "the", "is", "are", "no", "of", "and", "with", "there", "seen", "noted", "mild",
            "stable", "unremarkable", "normal", "appears", "measures", "evidence", "acute",
            "abnormality", "significant", "without", "interval", "change", "cm", "comparison",
            "none", "available", "technique", "standard", "views", "were", "obtained",
            "indication", "follow", "up",
        ] {
            assert!(!term_tokens.contains(glue), "glue word {glue} collides with a term token");
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let o = synthetic_ontology();
        let a = generate_synthetic_corpus(42, 25, &o).unwrap();
        let b = generate_synthetic_corpus(42, 25, &o).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(43, 25, &o).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_report() {
        let o = synthetic_ontology();
        let r = generate_synthetic_corpus(1, 1, &o).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].has_impression());
    }

    #[test]
    fn mean_lengths_near_targets() {
        let o = synthetic_ontology();
        let reports = generate_synthetic_corpus(11, 300, &o).unwrap();
        let mean_f: f64 = reports.iter().map(|r| r.findings_tokens.len() as f64).sum::<f64>()
            / reports.len() as f64;
        let mean_i: f64 = reports.iter().map(|r| r.impression_tokens.len() as f64).sum::<f64>()
            / reports.len() as f64;
        assert!((mean_f - 137.0).abs() <= 0.3 * 137.0, "mean findings length {mean_f}");
        assert!((mean_i - 37.0).abs() <= 0.3 * 37.0, "mean impression length {mean_i}");
    }

    #[test]
    fn tokenization_round_trips() {
        let o = synthetic_ontology();
        for r in generate_synthetic_corpus(5, 40, &o).unwrap() {
            assert_eq!(r.findings_tokens.join(" "), r.findings_text);
            assert_eq!(
                r.impression_tokens.join(" "),
                r.impression_text.clone().unwrap()
            );
        }
    }

    /// Exact-matcher oracle: concepts recoverable from the impression must be
    /// recoverable from the findings, and each report embeds 2 to 6 of them.
    #[test]
    fn impression_terms_subset_of_findings_terms() {
        let o = synthetic_ontology();
        for r in generate_synthetic_corpus(7, 120, &o).unwrap() {
            let f: BTreeSet<String> = match_exact(&o, &r.findings_tokens, 8)
                .into_iter()
                .map(|m| m.concept_id)
                .collect();
            let i: BTreeSet<String> = match_exact(&o, &r.impression_tokens, 8)
                .into_iter()
                .map(|m| m.concept_id)
                .collect();
            assert!(i.is_subset(&f), "report {}: {i:?} not within {f:?}", r.id);
            assert_eq!(i, f, "impression should restate exactly the embedded concepts");
            assert!(
                (2..=6).contains(&f.len()),
                "report {} embeds {} concepts",
                r.id,
                f.len()
            );
            // every impression token inside a matched term also appears in findings
            let matches = match_exact(&o, &r.impression_tokens, 8);
            let u = map_to_ontology_sequence(&matches, &r.impression_tokens).unwrap();
            for t in &u.tokens {
                assert!(r.findings_tokens.contains(t));
            }
        }
    }
}
