//! Contrastive search: pick, among the `k` most probable next tokens, the one
//! maximizing `(1 - alpha) * p(v) - alpha * max_j cos(h_v, h_j)`.

use super::{Candidate, DecodeTrace, DecoderConfig, StepTrace};
use crate::error::{Error, Result};
use crate::lm::{LmModel, TokenId};
use crate::numerics::{cosine, softmax};

/// The `k` most probable ids, most probable first, ties by lower id.
pub fn top_k(probs: &[f64], k: usize) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Scores candidates and returns the winner; equal scores go to the lower id.
pub fn select_contrastive(tokens: &[TokenId], probs: &[f64], penalties: &[f64], alpha: f64) -> Result<(TokenId, Vec<Candidate>)> {
    if tokens.is_empty() || tokens.len() != probs.len() || tokens.len() != penalties.len() {
        return Err(Error::invalid("candidate, probability and penalty lists must be nonempty and aligned"));
    }
    let cands: Vec<Candidate> = tokens
        .iter()
        .zip(probs)
        .zip(penalties)
        .map(|((&token, &p), &pen)| Candidate {
            token,
            confidence: p,
            penalty: pen,
            score: (1.0 - alpha) * p - alpha * pen,
        })
        .collect();
    let mut best = 0;
    for (i, c) in cands.iter().enumerate().skip(1) {
        let b = &cands[best];
        if c.score > b.score || (c.score == b.score && c.token < b.token) {
            best = i;
        }
    }
    Ok((cands[best].token, cands))
}

struct Scored {
    token: TokenId,
    candidates: Vec<Candidate>,
    /// Next-token distribution after appending the winner.
    next: Vec<f64>,
}

fn step(model: &LmModel, ctx: &[TokenId], probs: &[f64], k: usize, alpha: f64) -> Result<Scored> {
    let cands = top_k(probs, k);
    let mut penalties = Vec::with_capacity(cands.len());
    let mut nexts = Vec::with_capacity(cands.len());
    let mut ext = ctx.to_vec();
    ext.push(0);
    for &v in &cands {
        *ext.last_mut().unwrap() = v;
        let (h, logits) = model.forward(&ext)?;
        let hv = h.row(ctx.len());
        let mut pen = f64::NEG_INFINITY;
        for j in 0..ctx.len() {
            pen = pen.max(cosine(hv, h.row(j))?);
        }
        penalties.push(if ctx.is_empty() { 0.0 } else { pen });
        nexts.push(logits.row(ctx.len()).to_vec());
    }
    let p: Vec<f64> = cands.iter().map(|&v| probs[v]).collect();
    let (token, candidates) = select_contrastive(&cands, &p, &penalties, alpha)?;
    let idx = cands.iter().position(|&v| v == token).expect("winner is a candidate");
    Ok(Scored {
        token,
        candidates,
        next: softmax(&nexts[idx]),
    })
}

/// One contrastive-search step after `context`.
pub fn contrastive_step(model: &LmModel, context: &[TokenId], k: usize, alpha: f64) -> Result<(TokenId, Vec<Candidate>)> {
    if context.is_empty() {
        return Err(Error::invalid("context must be nonempty"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let probs = model.next_dist(context)?;
    let s = step(model, context, &probs, k, alpha)?;
    Ok((s.token, s.candidates))
}

pub(super) fn run(
    model: &LmModel,
    prefix: &[TokenId],
    cfg: &DecoderConfig,
    stop: &dyn Fn(&[TokenId]) -> bool,
) -> Result<DecodeTrace> {
    let mut ctx = prefix.to_vec();
    let mut probs = model.next_dist(&ctx)?;
    let mut trace = DecodeTrace::default();
    for _ in 0..cfg.max_new_tokens {
        let s = step(model, &ctx, &probs, cfg.k, cfg.alpha)?;
        ctx.push(s.token);
        trace.tokens.push(s.token);
        trace.steps.push(StepTrace {
            chosen: s.token,
            candidates: s.candidates,
        });
        probs = s.next;
        if stop(&trace.tokens) {
            trace.stopped = true;
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{TransformerConfig, Vocab};

    #[test]
    fn hand_example() {
        let (tok, cands) = select_contrastive(&[0, 1, 2], &[0.5, 0.3, 0.2], &[0.95, 0.1, 0.2], 0.6).unwrap();
        assert_eq!(tok, 1);
        let want = [-0.37, 0.06, -0.04];
        for (c, w) in cands.iter().zip(want) {
            assert!((c.score - w).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_penalties_at_alpha_one_pick_lowest_id() {
        let (tok, _) = select_contrastive(&[4, 2, 3], &[0.5, 0.3, 0.2], &[0.4, 0.4, 0.4], 1.0).unwrap();
        assert_eq!(tok, 2);
    }

    #[test]
    fn zero_penalty_keeps_argmax() {
        for alpha in [0.0, 0.3, 0.9] {
            let (tok, _) = select_contrastive(&[0, 1, 2], &[0.2, 0.5, 0.3], &[0.0; 3], alpha).unwrap();
            assert_eq!(tok, 1);
        }
    }

    #[test]
    fn top_k_ties() {
        assert_eq!(top_k(&[0.2, 0.4, 0.2, 0.2], 3), vec![1, 0, 2]);
    }

    #[test]
    fn step_respects_candidate_set_and_bounds() {
        let vocab = Vocab::from_words(["a", "b", "c", "d", "e", "f"]).unwrap();
        let cfg = TransformerConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            d_ff: 8,
            max_len: 8,
        };
        let m = LmModel::init(vocab, cfg, 9).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let ctx = [7, 8, 9];
            let (tok, cands) = contrastive_step(&m, &ctx, 3, alpha).unwrap();
            let p = m.next_dist(&ctx).unwrap();
            assert!(top_k(&p, 3).contains(&tok));
            assert!(cands.iter().all(|c| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&c.penalty)));
        }
    }
}
