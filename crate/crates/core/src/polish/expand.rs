//! Sentence expansion. Global expansion trains `skeleton [SEP] sentence`
//! pairs; local expansion inserts modifiers at a few selected gaps.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::decode::{decode, DecoderConfig};
use crate::error::{Error, Result};
use crate::infill::fill_blanks;
use crate::lm::{conditional_format, Frame, LmModel, TokenId, Vocab, BLANK, MASK};
use crate::numerics::rng::Rng;

/// A sentence with removable modifier spans and optional POS tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotated {
    pub tokens: Vec<String>,
    /// `(start, len)` spans that may be dropped.
    pub modifiers: Vec<(usize, usize)>,
    #[serde(default)]
    pub pos: Vec<String>,
}

impl Annotated {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::invalid("empty sentence"));
        }
        if !self.pos.is_empty() && self.pos.len() != self.tokens.len() {
            return Err(Error::invalid(format!(
                "{} POS tags for {} tokens",
                self.pos.len(),
                self.tokens.len()
            )));
        }
        let mut spans = self.modifiers.clone();
        spans.sort_unstable();
        let mut end = 0;
        let mut covered = 0;
        for (s, l) in spans {
            if l == 0 || s < end || s + l > self.tokens.len() {
                return Err(Error::invalid(format!("bad modifier span ({s}, {l})")));
            }
            end = s + l;
            covered += l;
        }
        if covered == self.tokens.len() {
            return Err(Error::invalid("modifiers cover the whole sentence"));
        }
        Ok(())
    }
}

/// Parses JSON lines of [`Annotated`]; blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotated>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let a: Annotated = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        a.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(a);
    }
    Ok(out)
}

/// `(skeleton, sentence)` pairs: each modifier is dropped independently
/// with probability `drop_rate`.
pub fn skeleton_pairs(items: &[Annotated], rng: &mut Rng, drop_rate: f64) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if !(0.0..=1.0).contains(&drop_rate) {
        return Err(Error::invalid(format!("drop_rate = {drop_rate} is outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(items.len());
    for a in items {
        a.validate()?;
        let mut keep = vec![true; a.tokens.len()];
        for &(s, l) in &a.modifiers {
            if rng.random::<f64>() < drop_rate {
                keep[s..s + l].iter_mut().for_each(|k| *k = false);
            }
        }
        let skeleton = a.tokens.iter().zip(&keep).filter(|(_, &k)| k).map(|(t, _)| t.clone()).collect();
        out.push((skeleton, a.tokens.clone()));
    }
    Ok(out)
}

/// Token ids of `T [SEP] S [CLS]` for each pair.
pub fn format_pairs(vocab: &Vocab, pairs: &[(Vec<String>, Vec<String>)], max_len: usize) -> Result<Vec<Vec<TokenId>>> {
    pairs
        .iter()
        .map(|(t, s)| conditional_format(vocab, &[vocab.encode(t)?, vocab.encode(s)?], Frame::TSepSCls, max_len))
        .collect()
}

/// Decodes a full sentence from `skeleton [SEP]`, dropping the final `[CLS]`.
pub fn global_expand<S: AsRef<str>>(model: &LmModel, skeleton: &[S], cfg: &DecoderConfig) -> Result<Vec<String>> {
    let vocab = model.vocab();
    let prompt = conditional_format(vocab, &[vocab.encode(skeleton)?], Frame::PrefixSep, model.max_len())?;
    let (mut out, _) = decode(model, &prompt, cfg)?;
    if out.last() == Some(&vocab.specials().cls) {
        out.pop();
    }
    vocab.decode(&out)
}

fn is_noun(tag: &str) -> bool {
    matches!(tag, "NOUN" | "PROPN" | "NN" | "NNS" | "NNP" | "NNPS")
}

fn is_adj(tag: &str) -> bool {
    matches!(tag, "ADJ" | "JJ" | "JJR" | "JJS")
}

fn is_punct(tag: &str) -> bool {
    matches!(tag, "PUNCT" | "." | ",")
}

/// Gaps where a modifier may go (gap `i` is before token `i`): first the
/// gap before the first noun not preceded by an adjective, then the gap
/// after a clause-final noun, then the remaining pre-noun gaps. At most
/// `max_sites` are kept, returned in position order.
pub fn expansion_sites<S: AsRef<str>>(pos: &[S], max_sites: usize) -> Vec<usize> {
    let tag = |i: usize| pos[i].as_ref();
    let before: Vec<usize> = (0..pos.len())
        .filter(|&i| is_noun(tag(i)) && (i == 0 || !is_adj(tag(i - 1))))
        .collect();
    let last_word = (0..pos.len()).rev().find(|&i| !is_punct(tag(i)));
    let after = last_word.filter(|&i| is_noun(tag(i))).map(|i| i + 1);
    let mut sites = Vec::new();
    for s in before.first().copied().into_iter().chain(after).chain(before.iter().skip(1).copied()) {
        if sites.len() < max_sites && !sites.contains(&s) {
            sites.push(s);
        }
    }
    sites.sort_unstable();
    sites
}

/// `sentence` with `marker` inserted at each gap in `sites`.
pub fn probe<S: AsRef<str>>(sentence: &[S], sites: &[usize], marker: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(sentence.len() + sites.len());
    for i in 0..=sentence.len() {
        if sites.contains(&i) {
            out.push(marker.to_string());
        }
        if i < sentence.len() {
            out.push(sentence[i].as_ref().to_string());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpandConfig {
    pub max_sites: usize,
    /// Probability of dropping each modifier when building skeletons.
    pub drop_rate: f64,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            max_sites: 2,
            drop_rate: 0.5,
        }
    }
}

impl ExpandConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::invalid(format!("drop_rate = {} is outside [0, 1]", self.drop_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    /// The sentence with `[MASK]` at each selected site.
    pub probe: Vec<String>,
    pub tokens: Vec<String>,
    /// Inserted `(start, len)` spans in `tokens`; empty fills are omitted.
    pub inserted: Vec<(usize, usize)>,
}

/// Inserts a modifier at each selected site, predicted by the infilling
/// model. Without eligible sites the sentence is returned unchanged.
pub fn local_expand<S: AsRef<str>, P: AsRef<str>>(
    sentence: &[S],
    pos: &[P],
    model: &LmModel,
    cfg: &ExpandConfig,
    decoder: &DecoderConfig,
) -> Result<Expansion> {
    if pos.len() != sentence.len() {
        return Err(Error::invalid(format!("{} POS tags for {} tokens", pos.len(), sentence.len())));
    }
    let sites = expansion_sites(pos, cfg.max_sites);
    let tokens: Vec<String> = sentence.iter().map(|s| s.as_ref().to_string()).collect();
    if sites.is_empty() {
        return Ok(Expansion {
            probe: tokens.clone(),
            tokens,
            inserted: Vec::new(),
        });
    }
    let masked = probe(sentence, &sites, MASK);
    let blanked = probe(sentence, &sites, BLANK);
    let (runs, _) = fill_blanks(model, &blanked, decoder, 1)?;
    let run = runs
        .into_iter()
        .next()
        .ok_or_else(|| Error::MalformedOutput("the infilling model produced structural tokens".into()))?;
    let mut out = Vec::new();
    let mut inserted = Vec::new();
    let mut seg = run.segments.into_iter();
    for tok in &blanked {
        if tok == BLANK {
            let fill = seg.next().unwrap_or_default();
            if !fill.is_empty() {
                inserted.push((out.len(), fill.len()));
            }
            out.extend(fill);
        } else {
            out.push(tok.clone());
        }
    }
    Ok(Expansion {
        probe: masked,
        tokens: out,
        inserted,
    })
}
