//! Concept hierarchy storage and the two concept-matching strategies used to
//! derive the auxiliary token sequence u from a findings token sequence.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, NO_CONCEPT_TOKEN};
use crate::error::{Error, Result};

/// One node of the concept hierarchy. Roots have depth 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: String,
    pub preferred_term: Vec<String>,
    pub synonyms: Vec<Vec<String>>,
    pub parent: Option<String>,
    pub depth: usize,
}

impl Concept {
    pub fn terms(&self) -> impl Iterator<Item = &Vec<String>> {
        std::iter::once(&self.preferred_term).chain(self.synonyms.iter())
    }
}

/// Raw record used when declaring concepts before depths are computed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: String,
    pub term: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

/// A rooted concept forest with a term index over preferred terms and
/// synonyms (all tokenized with the corpus tokenizer).
#[derive(Debug, Clone)]
pub struct Ontology {
    concepts: BTreeMap<String, Concept>,
    term_index: HashMap<Vec<String>, Vec<String>>,
    max_term_len: usize,
}

impl Ontology {
    /// Build from records, computing depths by traversal from the roots.
    pub fn from_records(records: Vec<ConceptRecord>) -> Result<Self> {
        let mut concepts: BTreeMap<String, Concept> = BTreeMap::new();
        for rec in records {
            if rec.term.trim().is_empty() {
                return Err(Error::Structure(format!("concept '{}' has an empty term", rec.id)));
            }
            let concept = Concept {
                id: rec.id.clone(),
                preferred_term: tokenize(&rec.term),
                synonyms: rec.synonyms.iter().map(|s| tokenize(s)).collect(),
                parent: rec.parent,
                depth: 0,
            };
            if concepts.insert(rec.id.clone(), concept).is_some() {
                return Err(Error::Structure(format!("duplicate concept id '{}'", rec.id)));
            }
        }
        // resolve parents
        for c in concepts.values() {
            if let Some(p) = &c.parent {
                if !concepts.contains_key(p) {
                    return Err(Error::Structure(format!(
                        "concept '{}' references missing parent '{}'",
                        c.id, p
                    )));
                }
            }
        }
        // depth by walking each node's parent chain; a chain longer than the
        // concept count proves a cycle
        let ids: Vec<String> = concepts.keys().cloned().collect();
        let mut depths: HashMap<String, usize> = HashMap::new();
        for id in &ids {
            let mut chain: Vec<String> = Vec::new();
            let mut cur = id.clone();
            loop {
                if let Some(&d) = depths.get(&cur) {
                    for (k, node) in chain.iter().rev().enumerate() {
                        depths.insert(node.clone(), d + k + 1);
                    }
                    break;
                }
                chain.push(cur.clone());
                if chain.len() > concepts.len() {
                    return Err(Error::Structure(format!("cycle involving concept '{cur}'")));
                }
                match &concepts[&cur].parent {
                    Some(p) => {
                        if chain.contains(p) {
                            return Err(Error::Structure(format!("cycle involving concept '{p}'")));
                        }
                        cur = p.clone();
                    }
                    None => {
                        let base = chain.len();
                        for (k, node) in chain.iter().enumerate() {
                            depths.insert(node.clone(), base - k);
                        }
                        break;
                    }
                }
            }
        }
        for (id, c) in concepts.iter_mut() {
            c.depth = depths[id];
        }
        // term index
        let mut term_index: HashMap<Vec<String>, Vec<String>> = HashMap::new();
        let mut max_term_len = 0;
        for c in concepts.values() {
            for term in c.terms() {
                if term.is_empty() {
                    continue;
                }
                max_term_len = max_term_len.max(term.len());
                let entry = term_index.entry(term.clone()).or_default();
                if !entry.contains(&c.id) {
                    entry.push(c.id.clone());
                }
            }
        }
        for ids in term_index.values_mut() {
            ids.sort();
        }
        Ok(Ontology {
            concepts,
            term_index,
            max_term_len,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn max_term_len(&self) -> usize {
        self.max_term_len
    }

    pub fn term_count(&self) -> usize {
        self.term_index.len()
    }

    /// Concept ids (sorted) whose preferred term or synonym equals `tokens`.
    pub fn concepts_for_term(&self, tokens: &[String]) -> Option<&[String]> {
        self.term_index.get(tokens).map(|v| v.as_slice())
    }

    pub fn indexed_terms(&self) -> impl Iterator<Item = (&Vec<String>, &Vec<String>)> {
        self.term_index.iter()
    }
}

/// Load an ontology from a line-delimited file with fields "id", "term",
/// "synonyms" (list), and optional "parent".
pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConceptRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, lineno + 1, e.to_string()))?;
        records.push(rec);
    }
    Ontology::from_records(records)
}

pub fn write_ontology(path: impl AsRef<Path>, records: &[ConceptRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)
            .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A span of the input linked to a concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMatch {
    pub concept_id: String,
    pub span_start: usize,
    /// Exclusive end index.
    pub span_end: usize,
    pub matched_tokens: Vec<String>,
    pub score: f64,
}

/// Left-to-right longest-match scan over exact n-gram term hits, restricted
/// to concepts at `min_depth` or deeper. Matches never overlap; equal-length
/// candidates at one position resolve to the lowest concept id.
pub fn match_exact(ontology: &Ontology, tokens: &[String], min_depth: usize) -> Vec<ConceptMatch> {
    assert!(min_depth >= 1, "min_depth must be at least 1");
    let mut matches = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        let max_len = ontology.max_term_len().min(tokens.len() - pos);
        let mut hit = None;
        for len in (1..=max_len).rev() {
            let slice = &tokens[pos..pos + len];
            if let Some(ids) = ontology.concepts_for_term(slice) {
                if let Some(id) = ids
                    .iter()
                    .find(|id| ontology.get(id).map_or(false, |c| c.depth >= min_depth))
                {
                    hit = Some((len, id.clone()));
                    break;
                }
            }
        }
        match hit {
            Some((len, id)) => {
                matches.push(ConceptMatch {
                    concept_id: id,
                    span_start: pos,
                    span_end: pos + len,
                    matched_tokens: tokens[pos..pos + len].to_vec(),
                    score: 1.0,
                });
                pos += len;
            }
            None => pos += 1,
        }
    }
    matches
}

fn jaccard(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Score every span of 1..=window tokens against every indexed term by
/// token-set Jaccard similarity; keep spans whose best score reaches the
/// threshold, then resolve overlaps by score, span length, position, and
/// concept id.
pub fn match_fuzzy(
    ontology: &Ontology,
    tokens: &[String],
    threshold: f64,
    window: usize,
) -> Vec<ConceptMatch> {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must be in (0, 1]");
    assert!(window >= 1, "window must be at least 1");
    let mut candidates: Vec<ConceptMatch> = Vec::new();
    for start in 0..tokens.len() {
        for len in 1..=window.min(tokens.len() - start) {
            let span = &tokens[start..start + len];
            let span_set: HashSet<&str> = span.iter().map(|s| s.as_str()).collect();
            let mut best: Option<(f64, &str)> = None;
            for (term, ids) in ontology.indexed_terms() {
                let term_set: HashSet<&str> = term.iter().map(|s| s.as_str()).collect();
                let score = jaccard(&span_set, &term_set);
                if score < threshold {
                    continue;
                }
                let id = ids.first().map(|s| s.as_str()).expect("indexed term has ids");
                best = match best {
                    None => Some((score, id)),
                    Some((bs, bid)) => {
                        if score > bs || (score == bs && id < bid) {
                            Some((score, id))
                        } else {
                            Some((bs, bid))
                        }
                    }
                };
            }
            if let Some((score, id)) = best {
                candidates.push(ConceptMatch {
                    concept_id: id.to_string(),
                    span_start: start,
                    span_end: start + len,
                    matched_tokens: span.to_vec(),
                    score,
                });
            }
        }
    }
    resolve_overlaps(candidates)
}

/// Overlap resolution: highest score, then longer span, then leftmost, then
/// lowest concept id. Output in document order.
fn resolve_overlaps(mut candidates: Vec<ConceptMatch>) -> Vec<ConceptMatch> {
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (b.span_end - b.span_start).cmp(&(a.span_end - a.span_start)))
            .then_with(|| a.span_start.cmp(&b.span_start))
            .then_with(|| a.concept_id.cmp(&b.concept_id))
    });
    let mut accepted: Vec<ConceptMatch> = Vec::new();
    for cand in candidates {
        if accepted
            .iter()
            .all(|m| cand.span_end <= m.span_start || cand.span_start >= m.span_end)
        {
            accepted.push(cand);
        }
    }
    accepted.sort_by_key(|m| m.span_start);
    accepted
}

/// The auxiliary sequence u: matched token slices concatenated in document
/// order, or the no-concept sentinel when nothing matched.
#[derive(Debug, Clone, PartialEq)]
pub struct OntologySequence {
    pub tokens: Vec<String>,
    pub provenance: Vec<ConceptMatch>,
}

impl OntologySequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Mapping function from matches to the auxiliary sequence u. Matches must be
/// sorted by span start and non-overlapping, as both matchers produce them.
pub fn map_to_ontology_sequence(
    matches: &[ConceptMatch],
    tokens: &[String],
) -> Result<OntologySequence> {
    let mut last_end = 0;
    for m in matches {
        if m.span_start < last_end {
            return Err(Error::contract(format!(
                "matches overlap or are unsorted at span {}..{}",
                m.span_start, m.span_end
            )));
        }
        if m.span_start >= m.span_end || m.span_end > tokens.len() {
            return Err(Error::contract(format!(
                "span {}..{} out of bounds for input of length {}",
                m.span_start,
                m.span_end,
                tokens.len()
            )));
        }
        last_end = m.span_end;
    }
    if matches.is_empty() {
        return Ok(OntologySequence {
            tokens: vec![NO_CONCEPT_TOKEN.to_string()],
            provenance: Vec::new(),
        });
    }
    let mut out = Vec::new();
    for m in matches {
        out.extend_from_slice(&tokens[m.span_start..m.span_end]);
    }
    Ok(OntologySequence {
        tokens: out,
        provenance: matches.to_vec(),
    })
}
