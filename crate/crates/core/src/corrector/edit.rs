use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Substitute,
    Insert,
    Delete,
}

/// One proposed change. For inserts `pos` is the gap before token `pos`
/// (`pos == len` appends); otherwise it is the token index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub pos: usize,
    pub old: Option<String>,
    pub new: Option<String>,
    pub score: f64,
}

impl Edit {
    pub fn substitute(pos: usize, old: impl Into<String>, new: impl Into<String>, score: f64) -> Self {
        Self {
            kind: EditKind::Substitute,
            pos,
            old: Some(old.into()),
            new: Some(new.into()),
            score,
        }
    }

    pub fn insert(pos: usize, new: impl Into<String>, score: f64) -> Self {
        Self {
            kind: EditKind::Insert,
            pos,
            old: None,
            new: Some(new.into()),
            score,
        }
    }

    pub fn delete(pos: usize, old: impl Into<String>, score: f64) -> Self {
        Self {
            kind: EditKind::Delete,
            pos,
            old: Some(old.into()),
            new: None,
            score,
        }
    }

    fn check(&self, tokens: &[String]) -> Result<()> {
        let shape_ok = match self.kind {
            EditKind::Substitute => self.old.is_some() && self.new.is_some(),
            EditKind::Insert => self.old.is_none() && self.new.is_some(),
            EditKind::Delete => self.old.is_some() && self.new.is_none(),
        };
        if !shape_ok {
            return Err(Error::invalid(format!("{:?} edit at {} has the wrong old/new fields", self.kind, self.pos)));
        }
        let limit = if self.kind == EditKind::Insert { tokens.len() } else { tokens.len().saturating_sub(1) };
        if self.pos > limit || (self.kind != EditKind::Insert && tokens.is_empty()) {
            return Err(Error::invalid(format!("edit position {} out of range", self.pos)));
        }
        if let Some(old) = &self.old {
            if tokens[self.pos] != *old {
                return Err(Error::invalid(format!(
                    "edit expects {old:?} at {} but found {:?}",
                    self.pos, tokens[self.pos]
                )));
            }
        }
        Ok(())
    }
}

/// Applies edits expressed against the original positions of `tokens`.
/// Several inserts at one gap keep their list order.
pub fn apply_edits(tokens: &[String], edits: &[Edit]) -> Result<Vec<String>> {
    for e in edits {
        e.check(tokens)?;
    }
    let mut before: Vec<Vec<&str>> = vec![Vec::new(); tokens.len() + 1];
    let mut replace: Vec<Option<Option<&str>>> = vec![None; tokens.len()];
    for e in edits {
        match e.kind {
            EditKind::Insert => before[e.pos].push(e.new.as_deref().unwrap()),
            EditKind::Substitute | EditKind::Delete => {
                if replace[e.pos].is_some() {
                    return Err(Error::invalid(format!("two edits replace token {}", e.pos)));
                }
                replace[e.pos] = Some(e.new.as_deref());
            }
        }
    }
    let mut out = Vec::with_capacity(tokens.len() + edits.len());
    for (i, tok) in tokens.iter().enumerate() {
        out.extend(before[i].iter().map(|s| s.to_string()));
        match replace[i] {
            None => out.push(tok.clone()),
            Some(Some(new)) => out.push(new.to_string()),
            Some(None) => {}
        }
    }
    out.extend(before[tokens.len()].iter().map(|s| s.to_string()));
    Ok(out)
}
