//! Strict TOML configuration. Every section is optional and falls back to
//! its defaults; unknown keys and out-of-range values are errors that name
//! the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corrector::{CrfConfig, NullConfig};
use crate::datapipe::FilterThresholds;
use crate::decode::DecoderConfig;
use crate::error::{Error, Result};
use crate::infill::{Bm25Params, InfillConfig};
use crate::lm::{TrainConfig, TransformerConfig};
use crate::polish::{ExpandConfig, PolishConfig};

/// Archives and files the service loads. Each is optional; a request kind
/// whose model is absent is refused. Relative paths are resolved against
/// the config file's directory by [`load_config`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelPaths {
    /// Causal LM for completion.
    pub lm: Option<PathBuf>,
    pub crf: Option<PathBuf>,
    pub null: Option<PathBuf>,
    /// Infilling LM for keywords-to-sentence.
    pub infill: Option<PathBuf>,
    /// Skeleton-to-sentence LM.
    pub expand: Option<PathBuf>,
    /// Phrase embeddings for the polishing graph.
    pub embeddings: Option<PathBuf>,
    /// Plain-text corpus, one sentence per line, for retrieval.
    pub corpus: Option<PathBuf>,
}

impl ModelPaths {
    fn entries_mut(&mut self) -> [&mut Option<PathBuf>; 7] {
        [
            &mut self.lm,
            &mut self.crf,
            &mut self.null,
            &mut self.infill,
            &mut self.expand,
            &mut self.embeddings,
            &mut self.corpus,
        ]
    }

    /// Joins relative paths onto `base`.
    pub fn resolve(&mut self, base: &Path) {
        for p in self.entries_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Largest accepted request body.
    pub max_body_bytes: usize,
    /// Upper bound on `n` in a suggestion request.
    pub max_candidates: usize,
    pub models: ModelPaths,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_body_bytes: 64 * 1024,
            max_candidates: 16,
            models: ModelPaths::default(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bind.parse::<std::net::SocketAddr>().is_err() {
            return Err(Error::invalid(format!("bind = {:?} is not a socket address", self.bind)));
        }
        if self.max_body_bytes == 0 {
            return Err(Error::invalid("max_body_bytes must be positive"));
        }
        if self.max_candidates == 0 {
            return Err(Error::invalid("max_candidates must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: TransformerConfig,
    pub train: TrainConfig,
    pub decoder: DecoderConfig,
    pub crf: CrfConfig,
    pub null: NullConfig,
    pub infill: InfillConfig,
    pub polish: PolishConfig,
    pub expand: ExpandConfig,
    pub filter: FilterThresholds,
    pub bm25: Bm25Params,
    pub service: ServiceConfig,
}

/// Rewrites a section's validation error as a config error on the first
/// field of that section the message mentions.
fn blame<T: Serialize>(section: &str, value: &T, r: Result<()>) -> Result<()> {
    let Err(e) = r else { return Ok(()) };
    let msg = match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    };
    let fields: Vec<String> = match serde_json::to_value(value) {
        Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    };
    let words: Vec<&str> = msg.split(|c: char| !(c.is_alphanumeric() || c == '_')).collect();
    let field = words.iter().find(|w| fields.iter().any(|f| f == *w));
    let key = match field {
        Some(f) => format!("{section}.{f}"),
        None => section.to_string(),
    };
    Err(Error::Config { key, msg })
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        blame("model", &self.model, self.model.validate())?;
        blame("train", &self.train, self.train.validate())?;
        blame("decoder", &self.decoder, self.decoder.validate(None))?;
        blame("crf", &self.crf, self.crf.validate(None))?;
        blame("null", &self.null, self.null.validate())?;
        blame("infill", &self.infill, self.infill.validate())?;
        blame("polish", &self.polish, self.polish.validate())?;
        blame("expand", &self.expand, self.expand.validate())?;
        blame("filter", &self.filter, self.filter.validate())?;
        blame("bm25", &self.bm25, self.bm25.validate())?;
        blame("service", &self.service, self.service.validate())?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<Config> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| Error::Config {
        key: "<document>".into(),
        msg: e.message().to_string(),
    })?;
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().message().to_string();
        let unknown = msg
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
            .map(str::to_string);
        let key = match (unknown, path.as_str()) {
            (Some(f), "." | "") => f,
            (_, p) => p.to_string(),
        };
        Error::Config { key, msg }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let mut cfg = parse_config(&std::fs::read_to_string(path)?)?;
    if let Some(dir) = path.parent() {
        cfg.service.models.resolve(dir);
    }
    Ok(cfg)
}
