use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::embeddings::Embeddings;
use super::levenshtein::levenshtein;
use super::wmd::wmd;
use crate::error::{Error, Result};
use crate::numerics::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    BackTranslation,
    Retrieval,
    Dataset,
}

/// Candidate paraphrase pair. The scores are filled in by [`filter_pairs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub s: String,
    pub t: String,
    pub source: PairSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lex_dist: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wmd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sem_sim: Option<f64>,
}

impl SentencePair {
    pub fn new(s: impl Into<String>, t: impl Into<String>, source: PairSource) -> Self {
        Self {
            s: s.into(),
            t: t.into(),
            source,
            lex_dist: None,
            wmd: None,
            sem_sim: None,
        }
    }

    pub fn s_tokens(&self) -> Vec<&str> {
        self.s.split_whitespace().collect()
    }

    pub fn t_tokens(&self) -> Vec<&str> {
        self.t.split_whitespace().collect()
    }

    /// Computes `lex_dist`, `wmd` and `sem_sim`.
    pub fn score(&mut self, emb: &Embeddings) -> Result<()> {
        let (a, b) = (self.s_tokens(), self.t_tokens());
        let lex = levenshtein(&a, &b);
        let w = wmd(&a, &b, emb)?;
        let sem = cosine(&emb.mean_pool(&a)?, &emb.mean_pool(&b)?)?;
        self.lex_dist = Some(lex);
        self.wmd = Some(w);
        self.sem_sim = Some(sem);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterThresholds {
    pub min_lex: usize,
    pub min_wmd: f64,
    pub min_sem: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_lex: 2,
            min_wmd: 0.05,
            min_sem: 0.6,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        if !self.min_wmd.is_finite() || !self.min_sem.is_finite() {
            return Err(Error::invalid("filter thresholds must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectedBy {
    pub lex: usize,
    pub wmd: usize,
    pub sem: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionReport {
    pub kept: usize,
    pub rejected_by: RejectedBy,
}

/// Keeps pairs that are lexically far apart but semantically close.
///
/// A rejected pair is counted under the first failing test, checked in the
/// order lexical distance, WMD, semantic similarity. Output keeps input order.
pub fn filter_pairs(
    pairs: &[SentencePair],
    th: &FilterThresholds,
    emb: &Embeddings,
) -> Result<(Vec<SentencePair>, RejectionReport)> {
    th.validate()?;
    let mut kept = Vec::new();
    let mut report = RejectionReport::default();
    for pair in pairs {
        let mut p = pair.clone();
        p.score(emb)?;
        if p.lex_dist.unwrap() < th.min_lex {
            report.rejected_by.lex += 1;
        } else if p.wmd.unwrap() < th.min_wmd {
            report.rejected_by.wmd += 1;
        } else if p.sem_sim.unwrap() < th.min_sem {
            report.rejected_by.sem += 1;
        } else {
            report.kept += 1;
            kept.push(p);
        }
    }
    Ok((kept, report))
}

pub fn read_pairs_jsonl<R: BufRead>(r: R) -> Result<Vec<SentencePair>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_pairs_jsonl<W: Write>(mut w: W, pairs: &[SentencePair]) -> Result<()> {
    for p in pairs {
        let line = serde_json::to_string(p).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads `sentence1<TAB>sentence2<TAB>label` rows (the LCQMC/BQ layout) and
/// keeps rows labelled 1 as dataset pairs.
pub fn read_labelled_tsv<R: BufRead>(r: R) -> Result<Vec<SentencePair>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [s, t, label] = cols[..] else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        };
        match label.trim() {
            "1" => out.push(SentencePair::new(s, t, PairSource::Dataset)),
            "0" => {}
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("label must be 0 or 1, found {other:?}"),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb() -> Embeddings {
        Embeddings::from_pairs([
            ("the", vec![1.0, 0.0, 0.0]),
            ("cat", vec![0.0, 1.0, 0.0]),
            ("kitten", vec![0.1, 0.95, 0.0]),
            ("sat", vec![0.0, 0.0, 1.0]),
            ("rested", vec![0.0, 0.1, 0.95]),
            ("a", vec![0.95, 0.1, 0.0]),
            ("stock", vec![-1.0, 0.0, 0.0]),
            ("fell", vec![0.0, -1.0, 0.0]),
            ("sharply", vec![0.0, 0.0, -1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn identical_pair_rejected() {
        let p = SentencePair::new("the cat sat", "the cat sat", PairSource::Retrieval);
        let (kept, rep) = filter_pairs(&[p], &FilterThresholds::default(), &emb()).unwrap();
        assert!(kept.is_empty());
        assert_eq!(rep.rejected_by.lex, 1);
    }

    #[test]
    fn crafted_trio() {
        let pairs = vec![
            SentencePair::new("the cat sat", "a cat sat", PairSource::Retrieval),
            SentencePair::new("the cat sat", "stock fell sharply", PairSource::Retrieval),
            SentencePair::new("the cat sat", "a kitten rested", PairSource::Retrieval),
        ];
        let th = FilterThresholds {
            min_lex: 2,
            min_wmd: 0.1,
            min_sem: 0.6,
        };
        let (kept, rep) = filter_pairs(&pairs, &th, &emb()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].t, "a kitten rested");
        assert_eq!(
            rep,
            RejectionReport {
                kept: 1,
                rejected_by: RejectedBy { lex: 1, wmd: 0, sem: 1 }
            }
        );
        let open = FilterThresholds {
            min_lex: 0,
            min_wmd: 0.0,
            min_sem: -1.0,
        };
        assert_eq!(filter_pairs(&pairs, &open, &emb()).unwrap().0.len(), 3);
    }

    #[test]
    fn wmd_filter_fires_on_synonym_swap() {
        let mut e = emb();
        e.insert("feline", vec![0.0, 1.0, 0.0]).unwrap();
        e.insert("seated", vec![0.0, 0.0, 1.0]).unwrap();
        let p = SentencePair::new("the cat sat", "the feline seated", PairSource::Retrieval);
        let th = FilterThresholds {
            min_lex: 2,
            min_wmd: 0.1,
            min_sem: 0.6,
        };
        let (_, rep) = filter_pairs(&[p], &th, &e).unwrap();
        assert_eq!(rep.rejected_by.wmd, 1);
    }

    #[test]
    fn filter_commutes_with_permutation() {
        let pairs = vec![
            SentencePair::new("the cat sat", "a kitten rested", PairSource::Retrieval),
            SentencePair::new("the cat sat", "stock fell sharply", PairSource::Retrieval),
            SentencePair::new("cat sat", "kitten rested", PairSource::Dataset),
        ];
        let th = FilterThresholds::default();
        let (fwd, _) = filter_pairs(&pairs, &th, &emb()).unwrap();
        let rev: Vec<_> = pairs.iter().rev().cloned().collect();
        let (mut back, _) = filter_pairs(&rev, &th, &emb()).unwrap();
        back.reverse();
        assert_eq!(fwd, back);
    }

    #[test]
    fn jsonl_and_tsv() {
        let pairs = vec![SentencePair::new("a b", "c d", PairSource::BackTranslation)];
        let mut buf = Vec::new();
        write_pairs_jsonl(&mut buf, &pairs).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"s\":\"a b\",\"t\":\"c d\",\"source\":\"back_translation\"}\n"
        );
        assert_eq!(read_pairs_jsonl(&buf[..]).unwrap(), pairs);

        let tsv = "x y\tx z\t1\np q\tr s\t0\n";
        let got = read_labelled_tsv(tsv.as_bytes()).unwrap();
        assert_eq!(got, vec![SentencePair::new("x y", "x z", PairSource::Dataset)]);
        assert!(matches!(
            read_labelled_tsv("a\tb\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
