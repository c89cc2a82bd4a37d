use serde::{Deserialize, Serialize};

use super::example::{keyword_spans, make_example, output_segments, random_spans, reassemble, InfillExample};
use crate::decode::{decode_until, DecoderConfig};
use crate::error::{Error, Result};
use crate::lm::{LmModel, TokenId, Vocab, BLANK};
use crate::metrics::contains_in_order;
use crate::numerics::rng;

/// How training examples are cut from corpus sentences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskScheme {
    /// Independent per-token masking at `rate`, runs merged.
    Random { rate: f64 },
    /// Keep `keywords` random single tokens in sentence order and mask the rest.
    Keywords { keywords: usize },
}

/// Builds `copies` examples per sentence and returns their training
/// strings as token ids.
pub fn infill_corpus(
    vocab: &Vocab,
    corpus: &[Vec<String>],
    scheme: MaskScheme,
    copies: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(corpus.len() * copies);
    for _ in 0..copies {
        for s in corpus {
            let spans = match scheme {
                MaskScheme::Random { rate } => random_spans(&mut r, s.len(), rate)?,
                MaskScheme::Keywords { keywords } => {
                    let n = keywords.clamp(1, s.len().max(1));
                    let mut picked = rand::seq::index::sample(&mut r, s.len(), n.min(s.len())).into_vec();
                    picked.sort_unstable();
                    let kws: Vec<Vec<String>> = picked.iter().map(|&i| vec![s[i].clone()]).collect();
                    keyword_spans(s, &kws)?
                }
            };
            let ex = make_example(s, &spans)?;
            out.push(vocab.encode(&ex.training_tokens())?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfillConfig {
    /// Decoding runs per request.
    pub candidates: usize,
    /// Per-token mask rate when building training examples.
    pub mask_rate: f64,
    /// Examples drawn per corpus sentence.
    pub copies: usize,
}

impl Default for InfillConfig {
    fn default() -> Self {
        Self {
            candidates: 3,
            mask_rate: 0.4,
            copies: 4,
        }
    }
}

impl InfillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::invalid("candidates must be at least 1"));
        }
        if self.copies == 0 {
            return Err(Error::invalid("copies must be at least 1"));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::invalid(format!("mask_rate = {} is outside (0, 1)", self.mask_rate)));
        }
        Ok(())
    }
}

/// `[blank] k1 [blank] … kn [blank]`.
pub fn keyword_frame(keywords: &[Vec<String>]) -> Result<Vec<String>> {
    if keywords.is_empty() {
        return Err(Error::invalid("no keywords"));
    }
    let mut out = vec![BLANK.to_string()];
    for kw in keywords {
        if kw.is_empty() {
            return Err(Error::invalid("empty keyword"));
        }
        if kw.iter().any(|t| t == BLANK) {
            return Err(Error::invalid(format!("keywords may not contain {BLANK}")));
        }
        out.extend(kw.iter().cloned());
        out.push(BLANK.to_string());
    }
    Ok(out)
}

/// One balanced decode of a blanked input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledRun {
    /// Generated tokens after `[SEP]`, `[ans]` markers included.
    pub raw: Vec<String>,
    /// Text chosen for each `[blank]`, in order.
    pub segments: Vec<Vec<String>>,
    pub sentence: Vec<String>,
}

/// Fills every `[blank]` of `input` by decoding after `input [SEP]` until
/// as many `[ans]` as blanks have been produced. Run `i` decodes with seed
/// `cfg.seed + i`; `cfg.max_new_tokens` is the budget. Runs that emit
/// another structural token are counted in the second return value. Fails
/// with an incomplete-generation error only when no run balances.
pub fn fill_blanks<S: AsRef<str>>(
    model: &LmModel,
    input: &[S],
    cfg: &DecoderConfig,
    n: usize,
) -> Result<(Vec<FilledRun>, usize)> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let vocab = model.vocab();
    let sp = *vocab.specials();
    let mut prompt = vocab.encode(input)?;
    let expected = prompt.iter().filter(|&&t| t == sp.blank).count();
    if expected == 0 {
        return Err(Error::invalid("input has no [blank]"));
    }
    if prompt.iter().any(|&t| t != sp.blank && sp.contains(t)) {
        return Err(Error::invalid("input may not contain special tokens other than [blank]"));
    }
    prompt.push(sp.sep);
    let stop = |g: &[TokenId]| g.iter().filter(|&&t| t == sp.ans).count() >= expected;
    let structural = [sp.pad, sp.sep, sp.cls, sp.mask, sp.blank, sp.null];

    let mut runs = Vec::new();
    let mut rejected = 0;
    let mut first_incomplete = None;
    for i in 0..n {
        let run_cfg = DecoderConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let (tokens, trace) = decode_until(model, &prompt, &run_cfg, &stop)?;
        let raw = vocab.decode(&tokens)?;
        if !trace.stopped {
            let answered = tokens.iter().filter(|&&t| t == sp.ans).count();
            first_incomplete.get_or_insert(Error::IncompleteGeneration {
                partial: raw,
                answered,
                expected,
            });
            continue;
        }
        if tokens.iter().any(|t| structural.contains(t)) {
            rejected += 1;
            continue;
        }
        let sentence = reassemble(input, &raw)?;
        let segments = output_segments(&raw)?;
        runs.push(FilledRun { raw, segments, sentence });
    }
    match first_incomplete {
        Some(e) if runs.is_empty() && rejected == 0 => Err(e),
        _ => Ok((runs, rejected)),
    }
}

/// Outcome of one keywords-to-sentence request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfillOutcome {
    /// Accepted runs, duplicate sentences removed, in run order.
    pub accepted: Vec<FilledRun>,
    /// Raw decoded output of every balanced, well-formed run.
    pub raw: Vec<Vec<String>>,
    /// Runs dropped for lacking a keyword or containing structural tokens.
    pub rejected: usize,
}

/// Generates up to `n` sentences containing `keywords` in order, by
/// filling the frame `[blank] k1 [blank] … kn [blank]`.
pub fn infill_generate(
    model: &LmModel,
    keywords: &[Vec<String>],
    cfg: &DecoderConfig,
    n: usize,
) -> Result<InfillOutcome> {
    let frame = keyword_frame(keywords)?;
    let (runs, rejected) = fill_blanks(model, &frame, cfg, n)?;
    let mut out = InfillOutcome {
        rejected,
        ..InfillOutcome::default()
    };
    for run in runs {
        out.raw.push(run.raw.clone());
        if !contains_in_order(&run.sentence, keywords) {
            out.rejected += 1;
            continue;
        }
        if !out.accepted.iter().any(|a| a.sentence == run.sentence) {
            out.accepted.push(run);
        }
    }
    Ok(out)
}

impl InfillOutcome {
    pub fn sentences(&self) -> Vec<&[String]> {
        self.accepted.iter().map(|r| r.sentence.as_slice()).collect()
    }
}

/// The example a K2S request corresponds to when the full sentence is
/// known, useful for scoring.
pub fn keyword_example<S: AsRef<str>>(sentence: &[S], keywords: &[Vec<String>]) -> Result<InfillExample> {
    make_example(sentence, &keyword_spans(sentence, keywords)?)
}
