use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::datapipe::Embeddings;
use crate::error::{Error, Result};
use crate::numerics::cosine;

/// Phrases with their nearest neighbors by embedding cosine.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    embeddings: Embeddings,
    phrases: Vec<String>,
    index: HashMap<String, usize>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

fn by_score_then_name(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Cosine k-NN graph over every phrase of `emb`. Neighbor lists are sorted
/// by descending similarity, ties by phrase.
pub fn build_graph(emb: &Embeddings, topn: usize) -> Result<SimilarityGraph> {
    if emb.len() < 2 {
        return Err(Error::invalid("a similarity graph needs at least two phrases"));
    }
    if topn == 0 {
        return Err(Error::invalid("topn must be at least 1"));
    }
    let phrases: Vec<String> = emb.iter().map(|(p, _)| p.to_string()).collect();
    let vecs: Vec<&[f64]> = emb.iter().map(|(_, v)| v).collect();
    for (p, v) in phrases.iter().zip(&vecs) {
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::Degenerate(format!("zero vector for {p:?}")));
        }
    }
    let mut neighbors = Vec::with_capacity(phrases.len());
    for i in 0..phrases.len() {
        let mut row = Vec::with_capacity(phrases.len() - 1);
        for j in 0..phrases.len() {
            if i != j {
                row.push((j, cosine(vecs[i], vecs[j])?));
            }
        }
        row.sort_by(|a, b| by_score_then_name((&phrases[a.0], a.1), (&phrases[b.0], b.1)));
        row.truncate(topn);
        neighbors.push(row);
    }
    let index = phrases.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    Ok(SimilarityGraph {
        embeddings: emb.clone(),
        phrases,
        index,
        neighbors,
    })
}

impl SimilarityGraph {
    pub fn embeddings(&self) -> &Embeddings {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.index.contains_key(phrase)
    }

    /// Neighbors of `phrase` with their similarity, best first.
    pub fn neighbors(&self, phrase: &str) -> Option<Vec<(&str, f64)>> {
        let i = *self.index.get(phrase)?;
        Some(self.neighbors[i].iter().map(|&(j, s)| (self.phrases[j].as_str(), s)).collect())
    }
}

/// Mean cosine between each context phrase's input vector and the
/// candidate's output vector.
pub fn s2_score<S: AsRef<str>>(candidate: &str, context: &[S], input: &Embeddings, output: &Embeddings) -> Result<f64> {
    if context.is_empty() {
        return Err(Error::invalid("empty context"));
    }
    let w = output.get(candidate)?;
    let mut total = 0.0;
    for c in context {
        total += cosine(input.get(c.as_ref())?, w)?;
    }
    Ok(total / context.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolishConfig {
    /// Weight of the phrase similarity against the context fit.
    pub lambda: f64,
    /// Context words taken on each side of the span.
    pub window: usize,
    /// Number of candidates returned.
    pub top_m: usize,
    /// Neighbors kept per phrase when building the graph.
    pub graph_topn: usize,
}

impl Default for PolishConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            window: 4,
            top_m: 5,
            graph_topn: 20,
        }
    }
}

impl PolishConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda = {} is outside [0, 1]", self.lambda)));
        }
        for (name, v) in [("window", self.window), ("top_m", self.top_m), ("graph_topn", self.graph_topn)] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub phrase: String,
    pub s1: f64,
    pub s2: f64,
    pub score: f64,
}

/// Context words around `span`: up to `window` on each side, skipping
/// words without an embedding.
pub fn polish_context<'a, S: AsRef<str>>(
    sentence: &'a [S],
    span: (usize, usize),
    window: usize,
    emb: &Embeddings,
) -> Vec<&'a str> {
    let (start, len) = span;
    let left = start.saturating_sub(window)..start;
    let right = (start + len)..(start + len + window).min(sentence.len());
    left.chain(right)
        .map(|i| sentence[i].as_ref())
        .filter(|w| emb.contains(w))
        .collect()
}

/// Ranked replacements for the phrase at `span` (start, len). A phrase
/// outside the graph yields no candidates. When no context word has an
/// embedding the context term is 0.
pub fn polish<S: AsRef<str>>(
    sentence: &[S],
    span: (usize, usize),
    graph: &SimilarityGraph,
    cfg: &PolishConfig,
) -> Result<Vec<ScoredCandidate>> {
    cfg.validate()?;
    let (start, len) = span;
    if len == 0 || start + len > sentence.len() {
        return Err(Error::invalid(format!(
            "span ({start}, {len}) is not inside a sentence of {} tokens",
            sentence.len()
        )));
    }
    let phrase = sentence[start..start + len].iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    let Some(neigh) = graph.neighbors(&phrase) else {
        return Ok(Vec::new());
    };
    let emb = graph.embeddings();
    let context = polish_context(sentence, span, cfg.window, emb);
    let mut out = Vec::with_capacity(neigh.len());
    for (cand, s1) in neigh {
        let s2 = if context.is_empty() {
            0.0
        } else {
            s2_score(cand, &context, emb, emb)?
        };
        out.push(ScoredCandidate {
            phrase: cand.to_string(),
            s1,
            s2,
            score: cfg.lambda * s1 + (1.0 - cfg.lambda) * s2,
        });
    }
    out.sort_by(|a, b| by_score_then_name((&a.phrase, a.score), (&b.phrase, b.score)));
    out.truncate(cfg.top_m);
    Ok(out)
}
