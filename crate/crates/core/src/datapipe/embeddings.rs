use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Phrase vectors read from `phrase<TAB>v1 v2 … vd` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Embeddings {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
}

impl Embeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut out: Option<Self> = None;
        for (phrase, v) in pairs {
            let e = out.get_or_insert_with(|| Self::new(v.len()));
            e.insert(phrase, v)?;
        }
        out.ok_or_else(|| Error::invalid("no embeddings given"))
    }

    /// Adds or replaces a vector. Insertion order is kept for iteration.
    pub fn insert(&mut self, phrase: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let phrase = phrase.into();
        if self.order.is_empty() && self.dim == 0 {
            self.dim = v.len();
        }
        if v.len() != self.dim || v.is_empty() {
            return Err(Error::invalid(format!(
                "vector for {phrase:?} has {} components, expected {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("vector for {phrase:?} is not finite")));
        }
        if self.vectors.insert(phrase.clone(), v).is_none() {
            self.order.push(phrase);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.vectors.contains_key(phrase)
    }

    pub fn get(&self, phrase: &str) -> Result<&[f64]> {
        self.vectors
            .get(phrase)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(phrase.to_string()))
    }

    /// Phrases and vectors in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.order.iter().map(|p| (p.as_str(), self.vectors[p].as_slice()))
    }

    /// Every vector multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.vectors.values_mut() {
            v.iter_mut().for_each(|x| *x *= c);
        }
        out
    }

    /// Mean of the token vectors.
    pub fn mean_pool<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot pool an empty sentence"));
        }
        let mut acc = vec![0.0; self.dim];
        for tok in tokens {
            for (a, x) in acc.iter_mut().zip(self.get(tok.as_ref())?) {
                *a += x;
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (phrase, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "expected phrase<TAB>vector".into(),
            })?;
            let v = rest
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
            out.insert(phrase, v).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (p, v) in self.iter() {
            s.push_str(p);
            s.push('\t');
            let nums: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            s.push_str(&nums.join(" "));
            s.push('\n');
        }
        s
    }
}
