use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: &str = "[PAD]";
pub const SEP: &str = "[SEP]";
pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const BLANK: &str = "[blank]";
pub const ANS: &str = "[ans]";
pub const NULL: &str = "[null]";

/// Role name and default surface form of every special token.
pub const SPECIAL_ROLES: [(&str, &str); 7] = [
    ("pad", PAD),
    ("sep", SEP),
    ("cls", CLS),
    ("mask", MASK),
    ("blank", BLANK),
    ("ans", ANS),
    ("null", NULL),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: TokenId,
    pub sep: TokenId,
    pub cls: TokenId,
    pub mask: TokenId,
    pub blank: TokenId,
    pub ans: TokenId,
    pub null: TokenId,
}

impl Specials {
    pub fn all(&self) -> [TokenId; 7] {
        [self.pad, self.sep, self.cls, self.mask, self.blank, self.ans, self.null]
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.all().contains(&id)
    }
}

/// Ordered token inventory with the seven special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: Specials,
}

impl Vocab {
    /// Specials take ids 0..7 in [`SPECIAL_ROLES`] order; `words` follow in
    /// first-occurrence order with duplicates dropped.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = SPECIAL_ROLES.iter().map(|(_, t)| t.to_string()).collect();
        let mut seen: HashMap<String, TokenId> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad token {w:?}")));
            }
            if !seen.contains_key(w) {
                seen.insert(w.to_string(), tokens.len());
                tokens.push(w.to_string());
            }
        }
        Self::with_roles(tokens, &SPECIAL_ROLES.map(|(r, t)| (r.to_string(), t.to_string())))
    }

    /// Builds a vocabulary from an explicit token list and role assignments.
    pub fn with_roles(tokens: Vec<String>, roles: &[(String, String)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
        }
        let find = |role: &str| -> Result<TokenId> {
            let matches: Vec<&(String, String)> = roles.iter().filter(|(r, _)| r == role).collect();
            match matches.as_slice() {
                [(_, tok)] => index
                    .get(tok)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("special {role} = {tok:?} is not in the token list"))),
                [] => Err(Error::invalid(format!("special role {role} is not declared"))),
                _ => Err(Error::invalid(format!("special role {role} declared twice"))),
            }
        };
        let specials = Specials {
            pad: find("pad")?,
            sep: find("sep")?,
            cls: find("cls")?,
            mask: find("mask")?,
            blank: find("blank")?,
            ans: find("ans")?,
            null: find("null")?,
        };
        let mut ids = specials.all().to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != 7 {
            return Err(Error::invalid("two special roles share a token"));
        }
        Ok(Self {
            tokens,
            index,
            specials,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> &Specials {
        &self.specials
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.contains(id)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>> {
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                self.id(t)
                    .ok_or_else(|| Error::invalid(format!("token {t:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::invalid(format!("token id {i} out of range")))
            })
            .collect()
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(i) => Err(Error::invalid(format!(
                "token id {i} out of range for vocabulary of {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }

    /// Serializes to the vocabulary file format:
    ///
    /// ```text
    /// #specials
    /// pad=[PAD]
    /// ...
    /// #tokens
    /// [PAD]
    /// ...
    /// ```
    pub fn to_file_string(&self) -> String {
        let mut out = String::from("#specials\n");
        let ids = self.specials.all();
        for ((role, _), id) in SPECIAL_ROLES.iter().zip(ids) {
            let _ = writeln!(out, "{role}={}", self.tokens[id]);
        }
        out.push_str("#tokens\n");
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "#specials")) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "expected `#specials` header".into(),
                })
            }
        }
        let mut roles = Vec::new();
        let mut tokens = Vec::new();
        let mut in_tokens = false;
        for (i, line) in lines {
            if !in_tokens {
                if line == "#tokens" {
                    in_tokens = true;
                    continue;
                }
                let (role, tok) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("expected role=token, got {line:?}"),
                })?;
                roles.push((role.trim().to_string(), tok.trim().to_string()));
            } else if !line.is_empty() {
                tokens.push(line.to_string());
            }
        }
        if !in_tokens {
            return Err(Error::Parse {
                line: text.lines().count(),
                msg: "missing `#tokens` section".into(),
            });
        }
        Self::with_roles(tokens, &roles)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
