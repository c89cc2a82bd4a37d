//! Wire types of `/v1/suggest`.

use penwise::corrector::Edit;
use penwise::decode::{DecoderConfig, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Complete,
    Polish,
    Correct,
    Infill,
    Expand,
    Retrieve,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Complete,
        Kind::Polish,
        Kind::Correct,
        Kind::Infill,
        Kind::Expand,
        Kind::Retrieve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Complete => "complete",
            Kind::Polish => "polish",
            Kind::Correct => "correct",
            Kind::Infill => "infill",
            Kind::Expand => "expand",
            Kind::Retrieve => "retrieve",
        }
    }
}

/// Per-request changes to the configured decoder. The seed is taken from
/// the request itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nucleus_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<usize>,
}

impl DecoderOverrides {
    pub fn apply(&self, base: &DecoderConfig) -> DecoderConfig {
        let mut c = base.clone();
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.beam_width {
            c.beam_width = v;
        }
        if let Some(v) = self.nucleus_p {
            c.nucleus_p = v;
        }
        if let Some(v) = self.max_new_tokens {
            c.max_new_tokens = v;
        }
        c
    }
}

fn default_n() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestRequest {
    pub kind: Kind,
    /// Whitespace-tokenized input text.
    #[serde(default)]
    pub text: String,
    /// `(start, len)` in tokens of `text`; polish only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    /// Keywords in order; a keyword may be a multi-word phrase. Infill only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<DecoderOverrides>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SuggestRequest {
    pub fn new(kind: Kind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
            span: None,
            keywords: None,
            decoder: None,
            n: default_n(),
            seed: None,
        }
    }

    /// Cross-field checks that the JSON schema alone cannot express.
    pub fn validate(&self, max_candidates: usize) -> Result<(), ApiError> {
        let bad = |path: &str, msg: String| Err(ApiError::bad_request(msg, Some(path)));
        if self.n == 0 || self.n > max_candidates {
            return bad("n", format!("n = {} must be in 1..={max_candidates}", self.n));
        }
        match (self.kind, &self.span) {
            (Kind::Polish, None) => return bad("span", "span is required for polish".into()),
            (Kind::Polish, Some((_, 0))) => return bad("span", "span must be nonempty".into()),
            (k, Some(_)) if k != Kind::Polish => return bad("span", format!("span is not accepted for {}", k.name())),
            _ => {}
        }
        match (self.kind, &self.keywords) {
            (Kind::Infill, None) => return bad("keywords", "keywords are required for infill".into()),
            (Kind::Infill, Some(kw)) if kw.is_empty() || kw.iter().any(|k| k.trim().is_empty()) => {
                return bad("keywords", "keywords must be a nonempty list of nonempty strings".into())
            }
            (k, Some(_)) if k != Kind::Infill => {
                return bad("keywords", format!("keywords are not accepted for {}", k.name()))
            }
            _ => {}
        }
        if self.kind != Kind::Infill && self.text.trim().is_empty() {
            return bad("text", "text must be nonempty".into());
        }
        Ok(())
    }

    pub fn tokens(&self) -> Vec<String> {
        self.text.split_whitespace().map(str::to_string).collect()
    }

    pub fn keyword_tokens(&self) -> Vec<Vec<String>> {
        self.keywords
            .iter()
            .flatten()
            .map(|k| k.split_whitespace().map(str::to_string).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suggestion {
    pub text: String,
    pub score: f64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edits: Option<Vec<Edit>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestResponse {
    pub candidates: Vec<Suggestion>,
    pub model_version: String,
    pub latency_ms: u64,
}

impl SuggestResponse {
    /// Checks the response invariants against the request it answers.
    pub fn check(&self, req: &SuggestRequest) -> Result<(), String> {
        if self.candidates.len() > req.n {
            return Err(format!("{} candidates for n = {}", self.candidates.len(), req.n));
        }
        for w in self.candidates.windows(2) {
            if w[0].score < w[1].score {
                return Err(format!("candidates out of order: {} before {}", w[0].score, w[1].score));
            }
        }
        for c in &self.candidates {
            if !c.score.is_finite() {
                return Err(format!("non-finite score for {:?}", c.text));
            }
            if c.edits.is_some() != (req.kind == Kind::Correct) {
                return Err(format!("edits present on a {} candidate", req.kind.name()));
            }
        }
        if self.model_version.len() != 16 || !self.model_version.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("bad model_version {:?}", self.model_version));
        }
        Ok(())
    }
}

/// Sorts by score (best first, then text) and keeps `n`.
pub fn rank(mut candidates: Vec<Suggestion>, n: usize) -> Vec<Suggestion> {
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
    candidates.truncate(n);
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> Result<SuggestRequest, serde_json::Error> {
        serde_json::from_str(json)
    }

    #[test]
    fn defaults_and_round_trip() {
        let r = parse(r#"{"kind":"complete","text":"the cat"}"#).unwrap();
        assert_eq!(r.n, 3);
        assert_eq!(r, SuggestRequest::new(Kind::Complete, "the cat"));
        let back: SuggestRequest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn span_and_keywords_rules() {
        let ok = |j: &str| parse(j).unwrap().validate(16);
        assert!(ok(r#"{"kind":"polish","text":"a b","span":[0,1]}"#).is_ok());
        assert!(ok(r#"{"kind":"polish","text":"a b"}"#).is_err());
        assert!(ok(r#"{"kind":"complete","text":"a b","span":[0,1]}"#).is_err());
        assert!(ok(r#"{"kind":"infill","keywords":["rich","lots of money"]}"#).is_ok());
        assert!(ok(r#"{"kind":"infill","text":"x"}"#).is_err());
        assert!(ok(r#"{"kind":"infill","keywords":[]}"#).is_err());
        assert!(ok(r#"{"kind":"correct","text":"a","keywords":["a"]}"#).is_err());
        assert!(ok(r#"{"kind":"correct","text":"  "}"#).is_err());
        assert!(ok(r#"{"kind":"complete","text":"a","n":0}"#).is_err());
        assert!(ok(r#"{"kind":"complete","text":"a","n":17}"#).is_err());
    }

    #[test]
    fn strict_fields() {
        assert!(parse(r#"{"kind":"complete","text":"a","extra":1}"#).is_err());
        assert!(parse(r#"{"kind":"translate","text":"a"}"#).is_err());
        assert!(parse(r#"{"kind":"complete","text":"a","decoder":{"alhpa":0.1}}"#).is_err());
    }

    #[test]
    fn keyword_phrases_split() {
        let r = parse(r#"{"kind":"infill","keywords":["rich"," lots  of money"]}"#).unwrap();
        assert_eq!(r.keyword_tokens(), vec![vec!["rich"], vec!["lots", "of", "money"]]);
    }

    #[test]
    fn rank_orders_and_truncates() {
        let s = |t: &str, score| Suggestion {
            text: t.into(),
            score,
            provenance: Provenance::Generated,
            edits: None,
        };
        let out = rank(vec![s("b", 0.1), s("c", 0.5), s("a", 0.5), s("d", -1.0)], 3);
        let texts: Vec<&str> = out.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["a", "c", "b"]);
    }
}
