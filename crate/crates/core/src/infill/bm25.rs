//! Okapi BM25 over an in-memory inverted index.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::invalid(format!("k1 = {} must be a finite value >= 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!("b = {} is outside [0, 1]", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<Vec<String>>,
    /// term -> (doc id, term frequency), ascending doc id.
    postings: HashMap<String, Vec<(usize, usize)>>,
    avgdl: f64,
}

impl Bm25Index {
    pub fn build(docs: Vec<Vec<String>>, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Error::invalid("empty corpus"));
        }
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (id, doc) in docs.iter().enumerate() {
            let mut tf: HashMap<&str, usize> = HashMap::new();
            for t in doc {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push((id, n));
            }
        }
        let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / docs.len() as f64;
        Ok(Self {
            params,
            docs,
            postings,
            avgdl,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn docs(&self) -> &[Vec<String>] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    /// Number of documents containing `term`.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`, positive for every `n`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq(term) as f64;
        let total = self.docs.len() as f64;
        (1.0 + (total - n + 0.5) / (n + 0.5)).ln()
    }

    /// Scores of every document. Repeated query terms count once per
    /// occurrence.
    pub fn scores<S: AsRef<str>>(&self, query: &[S]) -> Result<Vec<f64>> {
        if query.is_empty() {
            return Err(Error::invalid("empty query"));
        }
        let Bm25Params { k1, b } = self.params;
        let mut out = vec![0.0; self.docs.len()];
        for q in query {
            let Some(list) = self.postings.get(q.as_ref()) else {
                continue;
            };
            let idf = self.idf(q.as_ref());
            for &(id, tf) in list {
                let tf = tf as f64;
                let norm = 1.0 - b + b * self.docs[id].len() as f64 / self.avgdl;
                out[id] += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        Ok(out)
    }
}

/// The `topn` best documents, by descending score then ascending id.
pub fn bm25_search<S: AsRef<str>>(index: &Bm25Index, query: &[S], topn: usize) -> Result<Vec<(usize, f64)>> {
    if topn == 0 {
        return Err(Error::invalid("topn must be at least 1"));
    }
    let mut ranked: Vec<(usize, f64)> = index.scores(query)?.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(topn);
    Ok(ranked)
}
