use super::embeddings::Embeddings;
use super::pairs::{PairSource, SentencePair};
use crate::error::{Error, Result};
use crate::numerics::dot;

/// Exact cosine nearest-neighbour index over mean-pooled sentence vectors.
#[derive(Debug, Clone)]
pub struct SentenceIndex {
    sentences: Vec<String>,
    units: Vec<Vec<f64>>,
}

fn unit(v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::Degenerate("sentence embedding has zero norm".into()));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

impl SentenceIndex {
    pub fn build<S: AsRef<str>>(corpus: &[S], emb: &Embeddings) -> Result<Self> {
        let mut sentences = Vec::with_capacity(corpus.len());
        let mut units = Vec::with_capacity(corpus.len());
        for s in corpus {
            let toks: Vec<&str> = s.as_ref().split_whitespace().collect();
            units.push(unit(emb.mean_pool(&toks)?)?);
            sentences.push(toks.join(" "));
        }
        Ok(Self { sentences, units })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence(&self, i: usize) -> &str {
        &self.sentences[i]
    }

    /// Up to `topn` `(index, cosine)` hits, most similar first, ties by
    /// index. Sentences equal to the query are skipped.
    pub fn search(&self, query: &str, topn: usize, emb: &Embeddings) -> Result<Vec<(usize, f64)>> {
        let toks: Vec<&str> = query.split_whitespace().collect();
        let q = unit(emb.mean_pool(&toks)?)?;
        let normalized = toks.join(" ");
        let mut hits: Vec<(usize, f64)> = self
            .units
            .iter()
            .enumerate()
            .filter(|(i, _)| self.sentences[*i] != normalized)
            .map(|(i, u)| (i, dot(&q, u)))
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(topn);
        Ok(hits)
    }
}

/// Retrieval-mined candidate pairs for `query`, with `sem_sim` set.
pub fn mine_retrieval(index: &SentenceIndex, query: &str, topn: usize, emb: &Embeddings) -> Result<Vec<SentencePair>> {
    Ok(index
        .search(query, topn, emb)?
        .into_iter()
        .map(|(i, sim)| {
            let mut p = SentencePair::new(query, index.sentence(i), PairSource::Retrieval);
            p.sem_sim = Some(sim);
            p
        })
        .collect())
}
