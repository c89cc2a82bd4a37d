use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::pairs::{PairSource, SentencePair};
use crate::error::{Error, Result};

/// Wire request of the translation contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub text: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub text: String,
}

/// Stateless request/response translator.
pub trait TranslationClient: Send + Sync {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse>;
}

/// Returns the input text unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl TranslationClient for IdentityTranslator {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse> {
        Ok(TranslateResponse { text: req.text.clone() })
    }
}

/// Word-by-word lookup per `(from, to)` direction; unknown words pass through.
#[derive(Debug, Clone, Default)]
pub struct TableTranslator {
    tables: HashMap<(String, String), HashMap<String, String>>,
}

impl TableTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entries<'a>(mut self, from: &str, to: &str, entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let table = self.tables.entry((from.to_string(), to.to_string())).or_default();
        for (a, b) in entries {
            table.insert(a.to_string(), b.to_string());
        }
        self
    }
}

impl TranslationClient for TableTranslator {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse> {
        let table = self.tables.get(&(req.from.clone(), req.to.clone()));
        let words: Vec<&str> = req
            .text
            .split_whitespace()
            .map(|w| table.and_then(|t| t.get(w)).map_or(w, String::as_str))
            .collect();
        Ok(TranslateResponse { text: words.join(" ") })
    }
}

/// Fails every call with a transport error.
#[derive(Debug, Clone, Default)]
pub struct FailingTranslator {
    pub message: String,
}

impl TranslationClient for FailingTranslator {
    fn translate(&self, _req: &TranslateRequest) -> Result<TranslateResponse> {
        Err(Error::Transport(if self.message.is_empty() {
            "translation backend unavailable".into()
        } else {
            self.message.clone()
        }))
    }
}

/// Round trip `s` through `pivot` and back to `lang`.
pub fn backtranslate(client: &dyn TranslationClient, s: &str, lang: &str, pivot: &str) -> Result<SentencePair> {
    let there = client.translate(&TranslateRequest {
        text: s.to_string(),
        from: lang.to_string(),
        to: pivot.to_string(),
    })?;
    let back = client.translate(&TranslateRequest {
        text: there.text,
        from: pivot.to_string(),
        to: lang.to_string(),
    })?;
    Ok(SentencePair::new(s, back.text, PairSource::BackTranslation))
}
