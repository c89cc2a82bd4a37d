use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{ANS, BLANK, SEP};
use crate::numerics::rng::Rng;

/// A sentence with some segments cut out. `input` holds the kept tokens
/// with one `[blank]` per cut segment; `output` lists the cut segments in
/// order, each followed by `[ans]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillExample {
    pub source: Vec<String>,
    pub input: Vec<String>,
    pub output: Vec<String>,
    /// Masked segments as `(start, len)`, sorted by start.
    pub spans: Vec<(usize, usize)>,
}

impl InfillExample {
    /// `input [SEP] output`, the string the infilling model is trained on.
    pub fn training_tokens(&self) -> Vec<String> {
        let mut out = self.input.clone();
        out.push(SEP.to_string());
        out.extend(self.output.iter().cloned());
        out
    }
}

fn is_marker(tok: &str) -> bool {
    tok == BLANK || tok == ANS || tok == SEP
}

/// Cuts `spans` out of `sentence`. Spans may touch but not overlap, and
/// at least one token must survive.
pub fn make_example<S: AsRef<str>>(sentence: &[S], spans: &[(usize, usize)]) -> Result<InfillExample> {
    let source: Vec<String> = sentence.iter().map(|s| s.as_ref().to_string()).collect();
    if let Some(t) = source.iter().find(|t| is_marker(t)) {
        return Err(Error::invalid(format!("sentence already contains {t}")));
    }
    let mut spans = spans.to_vec();
    spans.sort_unstable();
    let mut masked = 0;
    let mut end = 0;
    for &(start, len) in &spans {
        if len == 0 {
            return Err(Error::invalid(format!("empty span at {start}")));
        }
        if start < end {
            return Err(Error::invalid(format!("span at {start} overlaps the previous one")));
        }
        end = start + len;
        if end > source.len() {
            return Err(Error::invalid(format!("span ({start}, {len}) runs past {} tokens", source.len())));
        }
        masked += len;
    }
    if !spans.is_empty() && masked == source.len() {
        return Err(Error::invalid("spans cover the whole sentence"));
    }
    let mut input = Vec::new();
    let mut output = Vec::new();
    let mut at = 0;
    for &(start, len) in &spans {
        input.extend_from_slice(&source[at..start]);
        input.push(BLANK.to_string());
        output.extend_from_slice(&source[start..start + len]);
        output.push(ANS.to_string());
        at = start + len;
    }
    input.extend_from_slice(&source[at..]);
    Ok(InfillExample {
        source,
        input,
        output,
        spans,
    })
}

/// Spans covering everything except the first in-order occurrence of each
/// keyword.
pub fn keyword_spans<S: AsRef<str>>(sentence: &[S], keywords: &[Vec<String>]) -> Result<Vec<(usize, usize)>> {
    let mut kept = Vec::new();
    let mut from = 0;
    for kw in keywords {
        if kw.is_empty() {
            return Err(Error::invalid("empty keyword"));
        }
        let found = (from..(sentence.len() + 1).saturating_sub(kw.len()))
            .find(|&i| sentence[i..i + kw.len()].iter().zip(kw).all(|(a, b)| a.as_ref() == b))
            .ok_or_else(|| Error::invalid(format!("keyword {:?} not found in order", kw.join(" "))))?;
        kept.push((found, kw.len()));
        from = found + kw.len();
    }
    let mut spans = Vec::new();
    let mut at = 0;
    for (start, len) in kept {
        if start > at {
            spans.push((at, start - at));
        }
        at = start + len;
    }
    if at < sentence.len() {
        spans.push((at, sentence.len() - at));
    }
    Ok(spans)
}

/// Masks each token independently with probability `rate` and merges runs
/// into segments. If everything was masked one random token is kept.
pub fn random_spans(rng: &mut Rng, len: usize, rate: f64) -> Result<Vec<(usize, usize)>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("mask rate = {rate} is outside [0, 1]")));
    }
    let mut mask: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < rate).collect();
    if len > 0 && mask.iter().all(|&m| m) {
        mask[rng.random_range(0..len)] = false;
    }
    let mut spans = Vec::new();
    let mut i = 0;
    while i < len {
        if mask[i] {
            let start = i;
            while i < len && mask[i] {
                i += 1;
            }
            spans.push((start, i - start));
        } else {
            i += 1;
        }
    }
    Ok(spans)
}

/// Splits `output` into the segments terminated by `[ans]`.
pub fn output_segments<S: AsRef<str>>(output: &[S]) -> Result<Vec<Vec<String>>> {
    let mut segs = Vec::new();
    let mut cur = Vec::new();
    for t in output {
        if t.as_ref() == ANS {
            segs.push(std::mem::take(&mut cur));
        } else {
            cur.push(t.as_ref().to_string());
        }
    }
    if !cur.is_empty() {
        return Err(Error::MalformedOutput(format!(
            "{} tokens after the last {ANS}",
            cur.len()
        )));
    }
    Ok(segs)
}

/// Replaces the i-th `[blank]` of `input` with the i-th output segment.
pub fn reassemble<S: AsRef<str>, U: AsRef<str>>(input: &[S], output: &[U]) -> Result<Vec<String>> {
    let segs = output_segments(output)?;
    let blanks = input.iter().filter(|t| t.as_ref() == BLANK).count();
    if blanks != segs.len() {
        return Err(Error::MalformedOutput(format!(
            "{blanks} {BLANK} in the input but {} {ANS} in the output",
            segs.len()
        )));
    }
    let mut segs = segs.into_iter();
    let mut out = Vec::new();
    for t in input {
        if t.as_ref() == BLANK {
            out.extend(segs.next().unwrap());
        } else {
            out.push(t.as_ref().to_string());
        }
    }
    Ok(out)
}
