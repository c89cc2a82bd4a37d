//! Evaluation metrics: distinct-n, novelty, sentence-level detection and
//! correction scores, and generation diagnostics under an evaluation LM.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::datapipe::edit_positions;
use crate::error::{Error, Result};
use crate::lm::{LmModel, TokenId};
use crate::numerics::{cosine, log_sum_exp};

/// Unique n-grams over total n-grams across all `outputs`; 0 when there
/// are no n-grams at all.
pub fn distinct_n<T, S>(outputs: &[S], n: usize) -> f64
where
    T: Hash + Eq,
    S: AsRef<[T]>,
{
    if n == 0 {
        return 0.0;
    }
    let mut unique: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for seq in outputs {
        for gram in seq.as_ref().windows(n) {
            unique.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

/// Fraction of `output` tokens that are not keyword tokens. Keywords are
/// matched greedily, left to right, as an in-order subsequence.
pub fn novelty<T: PartialEq>(keywords: &[T], output: &[T]) -> f64 {
    if output.is_empty() {
        return 0.0;
    }
    let mut matched = 0;
    for tok in output {
        if matched < keywords.len() && *tok == keywords[matched] {
            matched += 1;
        }
    }
    (output.len() - matched) as f64 / output.len() as f64
}

/// True when each keyword phrase occurs in `sentence`, in order, without
/// overlapping.
pub fn contains_in_order<T: PartialEq>(sentence: &[T], keywords: &[Vec<T>]) -> bool {
    let mut from = 0;
    for kw in keywords {
        if kw.is_empty() {
            continue;
        }
        match (from..=sentence.len().saturating_sub(kw.len()))
            .find(|&i| i + kw.len() <= sentence.len() && sentence[i..i + kw.len()] == kw[..])
        {
            Some(i) => from = i + kw.len(),
            None => return false,
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(correct: usize, total: usize, tp: usize, flagged: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, flagged);
        let recall = ratio(tp, gold);
        Self {
            accuracy: ratio(correct, total),
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SentenceScores {
    pub detection: Prf,
    pub correction: Prf,
}

/// Sentence-level detection and correction scores.
///
/// A sentence is flagged when the hypothesis differs from the source.
/// Detection counts a true positive when the flagged positions equal the
/// gold error positions; correction when the hypothesis equals the target.
/// Precision is over flagged sentences, recall over sentences with gold
/// errors, accuracy over all sentences.
pub fn sentence_prf<T: PartialEq>(gold: &[(Vec<T>, Vec<T>)], hyp: &[Vec<T>]) -> Result<SentenceScores> {
    if gold.len() != hyp.len() {
        return Err(Error::invalid(format!(
            "{} gold pairs but {} hypotheses",
            gold.len(),
            hyp.len()
        )));
    }
    let (mut det_ok, mut det_tp, mut cor_ok, mut cor_tp, mut flagged, mut errored) = (0, 0, 0, 0, 0, 0);
    for ((src, tgt), h) in gold.iter().zip(hyp) {
        let gold_pos = edit_positions(src, tgt);
        let hyp_pos = edit_positions(src, h);
        let is_flagged = !hyp_pos.is_empty();
        let has_error = !gold_pos.is_empty();
        flagged += usize::from(is_flagged);
        errored += usize::from(has_error);
        if hyp_pos == gold_pos {
            det_ok += 1;
            det_tp += usize::from(has_error);
        }
        if h == tgt {
            cor_ok += 1;
            cor_tp += usize::from(has_error);
        }
    }
    let n = gold.len();
    Ok(SentenceScores {
        detection: Prf::from_counts(det_ok, n, det_tp, flagged, errored),
        correction: Prf::from_counts(cor_ok, n, cor_tp, flagged, errored),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenDiagnostics {
    /// Distinct-2 of the continuation.
    pub div: f64,
    /// Cosine of mean-pooled prefix and continuation representations.
    pub coh: f64,
    /// Perplexity of the continuation given the prefix.
    pub gen_ppl: f64,
}

pub fn gen_diagnostics(prefix: &[TokenId], continuation: &[TokenId], eval_model: &LmModel) -> Result<GenDiagnostics> {
    if continuation.is_empty() || prefix.is_empty() {
        return Err(Error::invalid("prefix and continuation must be nonempty"));
    }
    let div = distinct_n(&[continuation], 2);

    let mean_rows = |ids: &[TokenId]| -> Result<Vec<f64>> {
        let h = eval_model.encode(ids)?;
        let mut acc = vec![0.0; h.width()];
        for i in 0..h.len() {
            for (a, v) in acc.iter_mut().zip(h.row(i)) {
                *a += v;
            }
        }
        Ok(acc.into_iter().map(|v| v / h.len() as f64).collect())
    };
    let coh = cosine(&mean_rows(prefix)?, &mean_rows(continuation)?)?;

    let gen_ppl = (-mean_logprob(eval_model, prefix, continuation)?).exp();
    Ok(GenDiagnostics { div, coh, gen_ppl })
}

/// Mean log-probability per token of `continuation` after `prefix`.
pub fn mean_logprob(model: &LmModel, prefix: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
    if continuation.is_empty() || prefix.is_empty() {
        return Err(Error::invalid("prefix and continuation must be nonempty"));
    }
    let full: Vec<TokenId> = prefix.iter().chain(continuation).copied().collect();
    let (_, logits) = model.forward(&full)?;
    let mut total = 0.0;
    for (k, &tok) in continuation.iter().enumerate() {
        let row = logits.row(prefix.len() - 1 + k);
        total += row[tok] - log_sum_exp(row);
    }
    Ok(total / continuation.len() as f64)
}

/// Aggregate evaluation output with fixed key names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub distinct: BTreeMap<usize, f64>,
    pub novelty: Option<f64>,
    pub detection: Option<Prf>,
    pub correction: Option<Prf>,
    pub gen_ppl: Option<f64>,
    pub coherence: Option<f64>,
}
