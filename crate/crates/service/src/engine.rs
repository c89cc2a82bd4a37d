//! Request execution over an immutable set of loaded models.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use penwise::corrector::{apply_edits, correct_substitutions, null_correct, CrfModel, Edit, EditKind, NullDetectorModel};
use penwise::datapipe::Embeddings;
use penwise::decode::{decode, DecoderConfig, Strategy};
use penwise::infill::{bm25_search, infill_generate, keyword_frame, Bm25Index};
use penwise::lm::{conditional_format, Frame, LmModel, TokenId, Vocab};
use penwise::metrics::mean_logprob;
use penwise::polish::{build_graph, global_expand, polish, PolishConfig, SimilarityGraph};
use penwise::store::{self, Config, Persist};
use penwise::Error;
use sha2::{Digest, Sha256};

use crate::api::{rank, Kind, Provenance, SuggestRequest, SuggestResponse, Suggestion};
use crate::error::ApiError;

/// Everything a server may hold. Absent entries disable the kinds that
/// need them.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub lm: Option<LmModel>,
    pub crf: Option<CrfModel>,
    pub null: Option<NullDetectorModel>,
    pub infill: Option<LmModel>,
    pub expand: Option<LmModel>,
    pub embeddings: Option<Embeddings>,
    /// Retrieval corpus, one tokenized sentence per entry.
    pub corpus: Option<Vec<Vec<String>>>,
}

/// Reads an embedding table stored either as an archive or as text lines
/// of `phrase<TAB>v1 v2 …`.
pub fn load_embeddings(path: &Path) -> penwise::Result<Embeddings> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(store::MAGIC) {
        store::from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Embeddings::parse(&text)
    }
}

/// One whitespace-tokenized sentence per nonblank line.
pub fn read_corpus(path: &Path) -> penwise::Result<Vec<Vec<String>>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect())
}

fn with_path<T>(path: &Path, r: penwise::Result<T>) -> penwise::Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Models {
    /// Loads every path named in the service config.
    pub fn load(config: &Config) -> penwise::Result<Self> {
        fn archive<T: Persist>(p: &Option<std::path::PathBuf>) -> penwise::Result<Option<T>> {
            p.as_deref().map(|p| with_path(p, store::load(p))).transpose()
        }
        let paths = &config.service.models;
        Ok(Self {
            lm: archive(&paths.lm)?,
            crf: archive(&paths.crf)?,
            null: archive(&paths.null)?,
            infill: archive(&paths.infill)?,
            expand: archive(&paths.expand)?,
            embeddings: paths.embeddings.as_deref().map(|p| with_path(p, load_embeddings(p))).transpose()?,
            corpus: paths.corpus.as_deref().map(|p| with_path(p, read_corpus(p))).transpose()?,
        })
    }

    /// Names of the loaded entries, in a fixed order.
    pub fn names(&self) -> Vec<&'static str> {
        [
            ("lm", self.lm.is_some()),
            ("crf", self.crf.is_some()),
            ("null", self.null.is_some()),
            ("infill", self.infill.is_some()),
            ("expand", self.expand.is_some()),
            ("embeddings", self.embeddings.is_some()),
            ("corpus", self.corpus.is_some()),
        ]
        .into_iter()
        .filter_map(|(n, present)| present.then_some(n))
        .collect()
    }

    fn fingerprint(&self, h: &mut Sha256) -> penwise::Result<()> {
        let mut part = |name: &str, bytes: &[u8]| {
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        if let Some(m) = &self.lm {
            part("lm", &store::to_bytes(m)?);
        }
        if let Some(m) = &self.crf {
            part("crf", &store::to_bytes(m)?);
        }
        if let Some(m) = &self.null {
            part("null", &store::to_bytes(m)?);
        }
        if let Some(m) = &self.infill {
            part("infill", &store::to_bytes(m)?);
        }
        if let Some(m) = &self.expand {
            part("expand", &store::to_bytes(m)?);
        }
        if let Some(e) = &self.embeddings {
            part("embeddings", &store::to_bytes(e)?);
        }
        if let Some(c) = &self.corpus {
            let text: Vec<String> = c.iter().map(|s| s.join(" ")).collect();
            part("corpus", text.join("\n").as_bytes());
        }
        Ok(())
    }
}

pub struct Engine {
    models: Models,
    graph: Option<SimilarityGraph>,
    bm25: Option<Bm25Index>,
    config: Config,
    version: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Engine {
    pub fn new(models: Models, config: Config) -> penwise::Result<Self> {
        config.validate()?;
        let graph = match &models.embeddings {
            Some(e) => Some(build_graph(e, config.polish.graph_topn)?),
            None => None,
        };
        let bm25 = match &models.corpus {
            Some(c) => Some(Bm25Index::build(c.clone(), config.bm25)?),
            None => None,
        };
        // Settings that change outputs are part of the version; where the
        // server listens is not.
        let mut h = Sha256::new();
        models.fingerprint(&mut h)?;
        let mut behavior = config.clone();
        behavior.service = Default::default();
        h.update(behavior.to_toml().as_bytes());
        let version = hex(&h.finalize()[..8]);
        Ok(Self {
            models,
            graph,
            bm25,
            config,
            version,
        })
    }

    pub fn load(config: &Config) -> penwise::Result<Self> {
        Self::new(Models::load(config)?, config.clone())
    }

    pub fn model_version(&self) -> &str {
        &self.version
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn model_names(&self) -> Vec<&'static str> {
        self.models.names()
    }

    pub fn is_enabled(&self, kind: Kind) -> bool {
        match kind {
            Kind::Complete => self.models.lm.is_some(),
            Kind::Polish => self.graph.is_some(),
            Kind::Correct => self.models.crf.is_some() || self.models.null.is_some(),
            Kind::Infill => self.models.infill.is_some(),
            Kind::Expand => self.models.expand.is_some(),
            Kind::Retrieve => self.bm25.is_some(),
        }
    }

    pub fn enabled_kinds(&self) -> Vec<Kind> {
        Kind::ALL.into_iter().filter(|&k| self.is_enabled(k)).collect()
    }

    /// The request's own seed, or one derived from the model version and
    /// the request body.
    pub fn request_seed(&self, req: &SuggestRequest) -> u64 {
        if let Some(s) = req.seed {
            return s;
        }
        let mut h = Sha256::new();
        h.update(self.version.as_bytes());
        h.update(serde_json::to_vec(req).expect("requests serialize"));
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }

    pub fn suggest(&self, req: &SuggestRequest) -> Result<SuggestResponse, ApiError> {
        let start = Instant::now();
        req.validate(self.config.service.max_candidates)?;
        if !self.is_enabled(req.kind) {
            return Err(ApiError::NotEnabled(req.kind.name().into()));
        }
        let mut dec = match &req.decoder {
            Some(o) => o.apply(&self.config.decoder),
            None => self.config.decoder.clone(),
        };
        dec.seed = self.request_seed(req);
        dec.validate(None)
            .map_err(|e| ApiError::bad_request(e.to_string(), Some("decoder")))?;
        let candidates = match req.kind {
            Kind::Complete => self.complete(req, &dec)?,
            Kind::Polish => self.polish(req)?,
            Kind::Correct => self.correct(req)?,
            Kind::Infill => self.infill(req, &dec)?,
            Kind::Expand => self.expand(req, &dec)?,
            Kind::Retrieve => self.retrieve(req)?,
        };
        if let Some(c) = candidates.iter().find(|c| !c.score.is_finite()) {
            return Err(ApiError::Internal(format!("non-finite score for {:?}", c.text)));
        }
        Ok(SuggestResponse {
            candidates: rank(candidates, req.n),
            model_version: self.version.clone(),
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }

    fn complete(&self, req: &SuggestRequest, dec: &DecoderConfig) -> Result<Vec<Suggestion>, ApiError> {
        let m = self.models.lm.as_ref().expect("enabled");
        let vocab = m.vocab();
        let ids = vocab.encode(&req.tokens())?;
        let max_new = dec.max_new_tokens.min(m.max_len() - 1);
        let ctx = &ids[ids.len().saturating_sub(m.max_len() - max_new)..];
        let dec = DecoderConfig {
            max_new_tokens: max_new,
            ..dec.clone()
        };
        generated(m, ctx, &dec, req.n, |cfg| {
            let (out, _) = decode(m, ctx, cfg)?;
            Ok(out)
        })
    }

    fn polish(&self, req: &SuggestRequest) -> Result<Vec<Suggestion>, ApiError> {
        let g = self.graph.as_ref().expect("enabled");
        let cfg = PolishConfig {
            top_m: req.n,
            ..self.config.polish.clone()
        };
        let span = req.span.expect("validated");
        let tokens = req.tokens();
        if span.0 + span.1 > tokens.len() {
            return Err(ApiError::bad_request(
                format!("span ({}, {}) is outside a text of {} tokens", span.0, span.1, tokens.len()),
                Some("span"),
            ));
        }
        Ok(polish(&tokens, span, g, &cfg)?
            .into_iter()
            .map(|c| Suggestion {
                text: c.phrase,
                score: c.score,
                provenance: Provenance::Retrieved,
                edits: None,
            })
            .collect())
    }

    fn correct(&self, req: &SuggestRequest) -> Result<Vec<Suggestion>, ApiError> {
        let tokens = req.tokens();
        let edits = correction_edits(self.models.crf.as_ref(), self.models.null.as_ref(), &tokens, &self.config)?;
        let corrected = apply_edits(&tokens, &edits)?;
        let score = if edits.is_empty() {
            1.0
        } else {
            edits.iter().map(|e| e.score).sum::<f64>() / edits.len() as f64
        };
        Ok(vec![Suggestion {
            text: corrected.join(" "),
            score,
            provenance: Provenance::Generated,
            edits: Some(edits),
        }])
    }

    fn infill(&self, req: &SuggestRequest, dec: &DecoderConfig) -> Result<Vec<Suggestion>, ApiError> {
        let m = self.models.infill.as_ref().expect("enabled");
        let vocab = m.vocab();
        let keywords = req.keyword_tokens();
        let mut prompt = vocab.encode(&keyword_frame(&keywords)?)?;
        prompt.push(vocab.specials().sep);
        let dec = clamp_budget(dec, prompt.len(), m.max_len())?;
        let outcome = match infill_generate(m, &keywords, &dec, runs(&dec, req.n)) {
            Ok(o) => o,
            Err(Error::IncompleteGeneration { .. }) => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        outcome
            .accepted
            .iter()
            .map(|run| {
                let raw = vocab.encode(&run.raw)?;
                Ok(Suggestion {
                    text: run.sentence.join(" "),
                    score: mean_logprob(m, &prompt, &raw)?,
                    provenance: Provenance::Generated,
                    edits: None,
                })
            })
            .collect()
    }

    fn expand(&self, req: &SuggestRequest, dec: &DecoderConfig) -> Result<Vec<Suggestion>, ApiError> {
        let m = self.models.expand.as_ref().expect("enabled");
        let vocab = m.vocab();
        let tokens = req.tokens();
        let prompt = conditional_format(vocab, &[vocab.encode(&tokens)?], Frame::PrefixSep, m.max_len())?;
        let dec = clamp_budget(dec, prompt.len(), m.max_len())?;
        generated(m, &prompt, &dec, req.n, |cfg| {
            vocab.encode(&global_expand(m, &tokens, cfg)?)
        })
    }

    fn retrieve(&self, req: &SuggestRequest) -> Result<Vec<Suggestion>, ApiError> {
        let idx = self.bm25.as_ref().expect("enabled");
        Ok(bm25_search(idx, &req.tokens(), req.n)?
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(i, s)| Suggestion {
                text: idx.docs()[i].join(" "),
                score: s,
                provenance: Provenance::Retrieved,
                edits: None,
            })
            .collect())
    }
}

/// Substitutions from the CRF plus insertions and deletions from the null
/// detector, ordered by position with inserts first at each position. The
/// detector reads the CRF output, which keeps token positions, so it never
/// sees misspellings the CRF already fixed. A detector deletion of a token
/// the CRF rewrote is dropped.
pub fn correction_edits(
    crf: Option<&CrfModel>,
    null: Option<&NullDetectorModel>,
    tokens: &[String],
    config: &Config,
) -> penwise::Result<Vec<Edit>> {
    let mut edits = Vec::new();
    let mut fixed = tokens.to_vec();
    let mut rewritten = BTreeSet::new();
    if let Some(crf) = crf {
        let ids = crf.vocab().encode(tokens)?;
        let (out, subs) = correct_substitutions(crf, &ids, config.crf.viterbi_k)?;
        fixed = crf.vocab().decode(&out)?;
        rewritten.extend(subs.iter().map(|e| e.pos));
        edits.extend(subs);
    }
    if let Some(null) = null {
        let ids = null.model.vocab().encode(&fixed)?;
        let found = null_correct(null, &ids, &config.null)?;
        edits.extend(
            found
                .into_iter()
                .filter(|e| !(e.kind == EditKind::Delete && rewritten.contains(&e.pos))),
        );
    }
    edits.sort_by_key(|e| (e.pos, e.kind != EditKind::Insert));
    Ok(edits)
}

/// Sampling gives a different output per seed; the other strategies are
/// deterministic and need a single run.
fn runs(dec: &DecoderConfig, n: usize) -> usize {
    if dec.strategy == Strategy::Nucleus {
        n
    } else {
        1
    }
}

fn clamp_budget(dec: &DecoderConfig, prompt_len: usize, max_len: usize) -> penwise::Result<DecoderConfig> {
    if prompt_len >= max_len {
        return Err(Error::Length {
            len: prompt_len + 1,
            max: max_len,
        });
    }
    Ok(DecoderConfig {
        max_new_tokens: dec.max_new_tokens.min(max_len - prompt_len),
        ..dec.clone()
    })
}

/// Runs `gen` with seeds `dec.seed + i`, keeps distinct outputs free of
/// special tokens, and scores each by its mean log-probability after
/// `prompt`. A trailing `[CLS]` is scored but not shown.
fn generated(
    m: &LmModel,
    prompt: &[TokenId],
    dec: &DecoderConfig,
    n: usize,
    gen: impl Fn(&DecoderConfig) -> penwise::Result<Vec<TokenId>>,
) -> Result<Vec<Suggestion>, ApiError> {
    let vocab: &Vocab = m.vocab();
    let cls = vocab.specials().cls;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..runs(dec, n) {
        let cfg = DecoderConfig {
            seed: dec.seed.wrapping_add(i as u64),
            ..dec.clone()
        };
        let ids = gen(&cfg)?;
        let shown = ids.strip_suffix(&[cls]).unwrap_or(&ids);
        if shown.is_empty() || shown.iter().any(|&t| vocab.is_special(t)) {
            continue;
        }
        let text = vocab.decode(shown)?.join(" ");
        if !seen.insert(text.clone()) {
            continue;
        }
        out.push(Suggestion {
            text,
            score: mean_logprob(m, prompt, &ids)?,
            provenance: Provenance::Generated,
            edits: None,
        });
    }
    Ok(out)
}
