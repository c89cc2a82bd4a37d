//! Decoding strategies over a trained [`LmModel`]: greedy, beam search,
//! nucleus sampling and contrastive search.

mod contrastive;
mod repetition;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LmModel, TokenId};
use crate::numerics::{argmax, log_sum_exp, rng, softmax};

pub use contrastive::{contrastive_step, select_contrastive, top_k};
pub use repetition::{repetition_report, RepetitionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam,
    Nucleus,
    Contrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub strategy: Strategy,
    /// Candidate-set size for contrastive search.
    pub k: usize,
    /// Weight of the degeneration penalty, in `[0, 1]`.
    pub alpha: f64,
    pub beam_width: usize,
    pub nucleus_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Contrastive,
            k: 5,
            alpha: 0.6,
            beam_width: 4,
            nucleus_p: 0.95,
            max_new_tokens: 32,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            strategy: Strategy::Greedy,
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn contrastive(k: usize, alpha: f64, max_new_tokens: usize) -> Self {
        Self {
            strategy: Strategy::Contrastive,
            k,
            alpha,
            max_new_tokens,
            ..Self::default()
        }
    }

    /// Range checks; `vocab_size` bounds `k` when given.
    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha = {} is outside [0, 1]", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if let Some(v) = vocab_size {
            if self.k > v {
                return Err(Error::invalid(format!("k = {} exceeds the vocabulary size {v}", self.k)));
            }
        }
        if self.beam_width == 0 {
            return Err(Error::invalid("beam_width must be at least 1"));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::invalid(format!("nucleus_p = {} is outside (0, 1]", self.nucleus_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("max_new_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: TokenId,
    pub confidence: f64,
    pub penalty: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub chosen: TokenId,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepTrace>,
    /// True when generation ended on the stop condition rather than the budget.
    pub stopped: bool,
}

/// Decodes after `prefix` until the model emits `[CLS]` or the budget runs
/// out. The returned tokens exclude the prefix and include the stop token.
pub fn decode(model: &LmModel, prefix: &[TokenId], cfg: &DecoderConfig) -> Result<(Vec<TokenId>, DecodeTrace)> {
    let cls = model.vocab().specials().cls;
    decode_until(model, prefix, cfg, &|generated: &[TokenId]| generated.last() == Some(&cls))
}

/// As [`decode`] with a custom stop predicate over the generated tokens.
pub fn decode_until(
    model: &LmModel,
    prefix: &[TokenId],
    cfg: &DecoderConfig,
    stop: &dyn Fn(&[TokenId]) -> bool,
) -> Result<(Vec<TokenId>, DecodeTrace)> {
    cfg.validate(Some(model.vocab().len()))?;
    if prefix.is_empty() {
        return Err(Error::invalid("prefix must be nonempty"));
    }
    if prefix.len() + cfg.max_new_tokens > model.max_len() {
        return Err(Error::Length {
            len: prefix.len() + cfg.max_new_tokens,
            max: model.max_len(),
        });
    }
    model.vocab().check_ids(prefix)?;
    let trace = match cfg.strategy {
        Strategy::Greedy => greedy(model, prefix, cfg, stop)?,
        Strategy::Nucleus => nucleus(model, prefix, cfg, stop)?,
        Strategy::Contrastive => contrastive::run(model, prefix, cfg, stop)?,
        Strategy::Beam => beam(model, prefix, cfg, stop)?,
    };
    Ok((trace.tokens.clone(), trace))
}

fn greedy(model: &LmModel, prefix: &[TokenId], cfg: &DecoderConfig, stop: &dyn Fn(&[TokenId]) -> bool) -> Result<DecodeTrace> {
    let mut ctx = prefix.to_vec();
    let mut trace = DecodeTrace::default();
    for _ in 0..cfg.max_new_tokens {
        let p = model.next_dist(&ctx)?;
        let tok = argmax(&p);
        trace.steps.push(StepTrace {
            chosen: tok,
            candidates: vec![Candidate {
                token: tok,
                confidence: p[tok],
                penalty: 0.0,
                score: p[tok],
            }],
        });
        ctx.push(tok);
        trace.tokens.push(tok);
        if stop(&trace.tokens) {
            trace.stopped = true;
            break;
        }
    }
    Ok(trace)
}

/// Smallest set of most probable tokens whose mass reaches `p`, as
/// `(token, renormalized probability)`, most probable first, ties by id.
pub fn nucleus_set(probs: &[f64], p: f64) -> Vec<(TokenId, f64)> {
    let mut order: Vec<TokenId> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for t in order {
        kept.push(t);
        mass += probs[t];
        if mass >= p {
            break;
        }
    }
    kept.into_iter().map(|t| (t, probs[t] / mass)).collect()
}

fn nucleus(model: &LmModel, prefix: &[TokenId], cfg: &DecoderConfig, stop: &dyn Fn(&[TokenId]) -> bool) -> Result<DecodeTrace> {
    let mut r = rng::seeded(cfg.seed);
    let mut ctx = prefix.to_vec();
    let mut trace = DecodeTrace::default();
    for _ in 0..cfg.max_new_tokens {
        let p = model.next_dist(&ctx)?;
        let set = nucleus_set(&p, cfg.nucleus_p);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut tok = set.last().expect("nonempty nucleus").0;
        for &(t, q) in &set {
            acc += q;
            if u < acc {
                tok = t;
                break;
            }
        }
        trace.steps.push(StepTrace {
            chosen: tok,
            candidates: set
                .iter()
                .map(|&(t, q)| Candidate {
                    token: t,
                    confidence: p[t],
                    penalty: 0.0,
                    score: q,
                })
                .collect(),
        });
        ctx.push(tok);
        trace.tokens.push(tok);
        if stop(&trace.tokens) {
            trace.stopped = true;
            break;
        }
    }
    Ok(trace)
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    logp: f64,
    done: bool,
}

/// Beam search keeping the `beam_width` best partial sequences by
/// cumulative log-probability. Finished hypotheses stay in the beam.
fn beam(model: &LmModel, prefix: &[TokenId], cfg: &DecoderConfig, stop: &dyn Fn(&[TokenId]) -> bool) -> Result<DecodeTrace> {
    let mut beams = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        done: false,
    }];
    for _ in 0..cfg.max_new_tokens {
        if beams.iter().all(|h| h.done) {
            break;
        }
        let mut next: Vec<Hyp> = Vec::new();
        for h in &beams {
            if h.done {
                next.push(h.clone());
                continue;
            }
            let ctx: Vec<TokenId> = prefix.iter().chain(&h.tokens).copied().collect();
            let (_, logits) = model.forward(&ctx)?;
            let row = logits.row(logits.rows() - 1);
            let lse = log_sum_exp(row);
            for (tok, &l) in row.iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                let done = stop(&tokens);
                next.push(Hyp {
                    tokens,
                    logp: h.logp + (l - lse),
                    done,
                });
            }
        }
        // Stable sort: equal scores keep parent order, then token id.
        next.sort_by(|a, b| b.logp.total_cmp(&a.logp));
        next.truncate(cfg.beam_width);
        beams = next;
    }
    let best = beams.into_iter().next().expect("beam is nonempty");
    let probs = step_probs(model, prefix, &best.tokens)?;
    Ok(DecodeTrace {
        steps: best
            .tokens
            .iter()
            .zip(probs)
            .map(|(&t, p)| StepTrace {
                chosen: t,
                candidates: vec![Candidate {
                    token: t,
                    confidence: p,
                    penalty: 0.0,
                    score: p,
                }],
            })
            .collect(),
        tokens: best.tokens,
        stopped: best.done,
    })
}

fn step_probs(model: &LmModel, prefix: &[TokenId], gen: &[TokenId]) -> Result<Vec<f64>> {
    if gen.is_empty() {
        return Ok(Vec::new());
    }
    let full: Vec<TokenId> = prefix.iter().chain(gen).copied().collect();
    let (_, logits) = model.forward(&full[..full.len() - 1])?;
    Ok(gen
        .iter()
        .enumerate()
        .map(|(k, &t)| softmax(logits.row(prefix.len() - 1 + k))[t])
        .collect())
}
