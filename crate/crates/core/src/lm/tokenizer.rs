use serde::{Deserialize, Serialize};

use super::vocab::SPECIAL_ROLES;

/// Splits raw text into vocabulary tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Whitespace-separated words.
    #[default]
    Whitespace,
    /// One token per non-whitespace character; bracketed special tokens
    /// such as `[blank]` stay whole.
    Char,
}

impl Tokenizer {
    pub fn split(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
            Tokenizer::Char => {
                let mut out = Vec::new();
                let mut rest = text;
                'scan: while let Some(c) = rest.chars().next() {
                    if c == '[' {
                        for (_, special) in SPECIAL_ROLES {
                            if let Some(tail) = rest.strip_prefix(special) {
                                out.push(special.to_string());
                                rest = tail;
                                continue 'scan;
                            }
                        }
                    }
                    if !c.is_whitespace() {
                        out.push(c.to_string());
                    }
                    rest = &rest[c.len_utf8()..];
                }
                out
            }
        }
    }

    pub fn join<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        let sep = match self {
            Tokenizer::Whitespace => " ",
            Tokenizer::Char => "",
        };
        tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(sep)
    }
}
