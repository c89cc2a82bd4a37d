//! Framing of conditional-generation training strings.

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// `T [SEP] S [CLS]`: a training pair.
    TSepSCls,
    /// `T [SEP]`: a generation prompt.
    PrefixSep,
}

impl Frame {
    fn arity(self) -> usize {
        match self {
            Frame::TSepSCls => 2,
            Frame::PrefixSep => 1,
        }
    }
}

pub fn conditional_format(vocab: &Vocab, parts: &[Vec<TokenId>], frame: Frame, max_len: usize) -> Result<Vec<TokenId>> {
    if parts.len() != frame.arity() {
        return Err(Error::invalid(format!(
            "{frame:?} takes {} parts, got {}",
            frame.arity(),
            parts.len()
        )));
    }
    let sp = vocab.specials();
    for p in parts {
        vocab.check_ids(p)?;
        if p.iter().any(|&t| t == sp.sep || t == sp.cls) {
            return Err(Error::invalid("parts may not contain [SEP] or [CLS]"));
        }
    }
    let mut out = parts[0].clone();
    out.push(sp.sep);
    if frame == Frame::TSepSCls {
        out.extend_from_slice(&parts[1]);
        out.push(sp.cls);
    }
    if out.len() > max_len {
        return Err(Error::Length {
            len: out.len(),
            max: max_len,
        });
    }
    Ok(out)
}

/// Inverse of [`conditional_format`].
pub fn conditional_unformat(vocab: &Vocab, seq: &[TokenId], frame: Frame) -> Result<Vec<Vec<TokenId>>> {
    let sp = vocab.specials();
    let sep = seq
        .iter()
        .position(|&t| t == sp.sep)
        .ok_or_else(|| Error::MalformedOutput("no [SEP] in framed sequence".into()))?;
    let head = seq[..sep].to_vec();
    let tail = &seq[sep + 1..];
    match frame {
        Frame::PrefixSep if tail.is_empty() => Ok(vec![head]),
        Frame::TSepSCls if tail.last() == Some(&sp.cls) && !tail[..tail.len() - 1].contains(&sp.cls) => {
            Ok(vec![head, tail[..tail.len() - 1].to_vec()])
        }
        _ => Err(Error::MalformedOutput(format!("sequence does not match {frame:?}"))),
    }
}
