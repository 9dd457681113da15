//! Extractive baselines: graph-centrality ranking (tf-idf cosine graph,
//! damped power iteration) and an SVD-based vector-space ranker. Both pick
//! `top_k` sentences and emit them in document order.

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Similarities below this do not create graph edges.
pub const SIMILARITY_THRESHOLD: f64 = 0.1;
/// Damping factor of the centrality random walk.
pub const DAMPING: f64 = 0.85;
/// Power iteration stops when ‖Mv − v‖∞ falls below this.
pub const POWER_RESIDUAL: f64 = 1e-8;

/// Split text into token sentences on sentence-final punctuation. Decimal
/// numbers survive intact because tokenization keeps "0.06" as one token, so
/// the interior dot never becomes a boundary. A trailing fragment without
/// final punctuation still forms a sentence; fragments containing only
/// punctuation are dropped.
pub fn split_sentences(text: &str) -> Vec<Vec<String>> {
    let tokens = tokenize(text);
    let mut sentences = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    let mut has_word = false;
    for t in tokens {
        let terminal = t == "." || t == "!" || t == "?";
        has_word |= !terminal;
        cur.push(t);
        if terminal {
            if has_word {
                sentences.push(std::mem::take(&mut cur));
            } else {
                cur.clear();
            }
            has_word = false;
        }
    }
    if has_word {
        sentences.push(cur);
    }
    sentences
}

/// Term-frequency × inverse-document-frequency sentence vectors over the
/// sentences' joint vocabulary, idf = ln(N/df).
fn tfidf_vectors(sentences: &[Vec<String>]) -> Vec<Vec<f64>> {
    let mut terms: Vec<&String> = Vec::new();
    for s in sentences {
        for t in s {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
    }
    let n = sentences.len() as f64;
    let idf: Vec<f64> = terms
        .iter()
        .map(|term| {
            let df = sentences.iter().filter(|s| s.contains(term)).count() as f64;
            (n / df).ln()
        })
        .collect();
    sentences
        .iter()
        .map(|s| {
            terms
                .iter()
                .zip(&idf)
                .map(|(term, idf)| s.iter().filter(|t| t == term).count() as f64 * idf)
                .collect()
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Stationary centrality scores of the damped walk on the thresholded
/// cosine-similarity graph. Rows with no edges (possible when a sentence's
/// tf-idf vector is all zero) behave as uniform teleports.
pub fn lexrank_scores(sentences: &[Vec<String>]) -> Vec<f64> {
    let n = sentences.len();
    if n == 0 {
        return Vec::new();
    }
    let vecs = tfidf_vectors(sentences);
    let mut adj = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if cosine(&vecs[i], &vecs[j]) >= SIMILARITY_THRESHOLD {
                adj[i][j] = 1.0;
            }
        }
    }
    // column entry j of the transition is a_ij / degree(i): a walk at i moves
    // along its edges uniformly; isolated rows teleport uniformly
    let mut transition = vec![vec![0.0; n]; n];
    for i in 0..n {
        let deg: f64 = adj[i].iter().sum();
        for j in 0..n {
            transition[i][j] = if deg > 0.0 { adj[i][j] / deg } else { 1.0 / n as f64 };
        }
    }
    let uniform = 1.0 / n as f64;
    let mut v = vec![uniform; n];
    loop {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += DAMPING * transition[i][j] * v[i];
            }
        }
        for x in &mut next {
            *x += (1.0 - DAMPING) * uniform;
        }
        let residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        // `residual` is exactly ‖update(v) − v‖∞, so returning v (not next)
        // makes the advertised stationarity bound hold for the returned
        // vector by construction rather than by a contraction argument
        if residual < POWER_RESIDUAL {
            return v;
        }
        v = next;
    }
}

/// Rank by score with ties going to the earlier sentence. Scores are
/// quantized to 12 significant digits first so that mathematically equal
/// scores that differ only by iterative-rounding ulps still count as ties.
fn select_top(scores: &[f64], top_k: usize) -> Vec<usize> {
    let max = scores.iter().cloned().fold(0.0f64, f64::max);
    let key = |s: f64| -> i64 {
        if max > 0.0 {
            (s / max * 1e12).round() as i64
        } else {
            0
        }
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| key(scores[j]).cmp(&key(scores[i])).then(i.cmp(&j)));
    let mut selected: Vec<usize> = idx.into_iter().take(top_k).collect();
    selected.sort_unstable();
    selected
}

/// Indices of the `top_k` most central sentences, in document order.
pub fn lexrank(sentences: &[Vec<String>], top_k: usize) -> Result<Vec<usize>> {
    if top_k == 0 {
        return Err(Error::config("top_k", "must be at least 1"));
    }
    Ok(select_top(&lexrank_scores(sentences), top_k))
}

/// One-sided Jacobi SVD of an m×n column-major matrix: returns singular
/// values with their right singular vectors (columns of V), sorted by
/// descending singular value.
fn jacobi_svd(columns: &mut Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = columns.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let app: f64 = columns[p].iter().map(|x| x * x).sum();
                let aqq: f64 = columns[q].iter().map(|x| x * x).sum();
                let apq: f64 = columns[p].iter().zip(&columns[q]).map(|(x, y)| x * y).sum();
                if apq.abs() <= 1e-14 * (app * aqq).sqrt().max(f64::MIN_POSITIVE) {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for rows in [&mut *columns, &mut v] {
                    for i in 0..rows[p].len() {
                        let (xp, xq) = (rows[p][i], rows[q][i]);
                        rows[p][i] = c * xp - s * xq;
                        rows[q][i] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = columns
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));
    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let v_cols: Vec<Vec<f64>> = order.iter().map(|&i| v[i].clone()).collect();
    (sigma, v_cols)
}

/// Per-sentence salience √(Σ σᵢ²·vᵢⱼ²) over the `retain` strongest SVD
/// components (capped at the numerical rank) of the term×sentence count
/// matrix. If the retention boundary falls inside a group of tied singular
/// values the whole group is kept, so the result does not depend on which
/// basis the SVD happened to pick for the degenerate subspace.
pub fn lsa_scores(sentences: &[Vec<String>], retain: usize) -> Vec<f64> {
    let n = sentences.len();
    if n == 0 {
        return Vec::new();
    }
    let mut terms: Vec<&String> = Vec::new();
    for s in sentences {
        for t in s {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
    }
    let mut columns: Vec<Vec<f64>> = sentences
        .iter()
        .map(|s| {
            terms
                .iter()
                .map(|term| s.iter().filter(|t| t == term).count() as f64)
                .collect()
        })
        .collect();
    let (sigma, v_cols) = jacobi_svd(&mut columns);
    let rank = sigma.iter().filter(|&&s| s > 1e-10 * sigma[0].max(f64::MIN_POSITIVE)).count();
    // never split a group of tied singular values: which basis an SVD picks
    // inside a degenerate group is arbitrary, but the group as a whole spans
    // a unique subspace, so including all of it keeps scores well defined
    // (and therefore invariant under sentence permutation)
    let mut r = retain.min(rank);
    let tie_tol = 1e-9 * sigma[0].max(f64::MIN_POSITIVE);
    while r > 0 && r < rank && sigma[r] >= sigma[r - 1] - tie_tol {
        r += 1;
    }
    (0..n)
        .map(|j| {
            (0..r)
                .map(|i| (sigma[i] * v_cols[i][j]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Indices of the `top_k` highest-salience sentences, in document order.
pub fn lsa_summarize(sentences: &[Vec<String>], top_k: usize) -> Result<Vec<usize>> {
    if top_k == 0 {
        return Err(Error::config("top_k", "must be at least 1"));
    }
    Ok(select_top(&lsa_scores(sentences, top_k), top_k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    LexRank,
    Lsa,
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexrank" => Ok(BaselineMethod::LexRank),
            "lsa" => Ok(BaselineMethod::Lsa),
            other => Err(Error::config("method", format!("unknown method '{other}'"))),
        }
    }
}

/// Extract a summary from raw text: split into sentences, rank, and join the
/// selected sentences' tokens in document order.
pub fn baseline_summary(text: &str, method: BaselineMethod, top_k: usize) -> Result<String> {
    let sentences = split_sentences(text);
    let selected = match method {
        BaselineMethod::LexRank => lexrank(&sentences, top_k)?,
        BaselineMethod::Lsa => lsa_summarize(&sentences, top_k)?,
    };
    Ok(selected
        .iter()
        .flat_map(|&i| sentences[i].iter().map(|s| s.as_str()))
        .collect::<Vec<_>>()
        .join(" "))
}
