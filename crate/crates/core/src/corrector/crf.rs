//! Non-autoregressive corrector: a bidirectional encoder produces per-position
//! label scores and a CRF with low-rank transitions `E1 E2ᵀ` ties adjacent
//! output tokens together.

use serde::{Deserialize, Serialize};

use super::chain;
use crate::error::{Error, Result};
use crate::lm::{EncoderLayout, TokenId, TransformerConfig, Vocab};
use crate::numerics::{
    fit, init_normal, log_sum_exp, rng, FitOptions, FitReport, Graph, ParamSet, Tensor, Var,
};

pub const EMIT_W: &str = "emit.w";
pub const EMIT_B: &str = "emit.b";
pub const TRANS_E1: &str = "crf.e1";
pub const TRANS_E2: &str = "crf.e2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSelect {
    Dp,
    Crf,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfConfig {
    /// Focal exponent, `>= 0`.
    pub gamma: f64,
    /// Labels kept per position by truncated decoding.
    pub viterbi_k: usize,
    pub losses: LossSelect,
    pub focal: bool,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            viterbi_k: 8,
            losses: LossSelect::Both,
            focal: false,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma = {} must be a finite value >= 0", self.gamma)));
        }
        if self.viterbi_k == 0 {
            return Err(Error::invalid("viterbi_k must be at least 1"));
        }
        if let Some(v) = vocab_size {
            if self.viterbi_k > v {
                return Err(Error::invalid(format!(
                    "viterbi_k = {} exceeds the vocabulary size {v}",
                    self.viterbi_k
                )));
            }
        }
        Ok(())
    }
}

/// The six per-sentence losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dp: f64,
    pub crf: f64,
    pub dp_focal: f64,
    pub crf_focal: f64,
    pub total: f64,
    pub total_focal: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LossVars {
    pub dp: Var,
    pub crf: Var,
    pub dp_focal: Var,
    pub crf_focal: Var,
    pub total: Var,
    pub total_focal: Var,
}

#[derive(Debug, Clone)]
pub struct CrfModel {
    vocab: Vocab,
    config: TransformerConfig,
    rank: usize,
    params: ParamSet,
    layout: EncoderLayout,
    emit_w: usize,
    emit_b: usize,
    e1: usize,
    e2: usize,
}

impl CrfModel {
    pub fn init(vocab: Vocab, config: TransformerConfig, rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 || rank > vocab.len() {
            return Err(Error::invalid(format!(
                "transition rank {rank} must lie in 1..={}",
                vocab.len()
            )));
        }
        let mut r = rng::split(seed, 0);
        let mut params = ParamSet::new();
        let layout = EncoderLayout::init(&config, vocab.len(), &mut params, &mut r)?;
        let v = vocab.len();
        let d = config.d_model;
        let emit_w = params.insert(EMIT_W, init_normal(&[d, v], 1.0 / (d as f64).sqrt(), &mut r));
        let emit_b = params.insert(EMIT_B, Tensor::zeros(&[v]));
        let e1 = params.insert(TRANS_E1, init_normal(&[v, rank], 0.1, &mut r));
        let e2 = params.insert(TRANS_E2, init_normal(&[v, rank], 0.1, &mut r));
        Ok(Self {
            vocab,
            config,
            rank,
            params,
            layout,
            emit_w,
            emit_b,
            e1,
            e2,
        })
    }

    pub fn from_parts(vocab: Vocab, config: TransformerConfig, params: ParamSet) -> Result<Self> {
        let layout = EncoderLayout::locate(&config, vocab.len(), &params)?;
        let find = |name: &str| {
            params
                .index_of(name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        let (emit_w, emit_b, e1, e2) = (find(EMIT_W)?, find(EMIT_B)?, find(TRANS_E1)?, find(TRANS_E2)?);
        let v = vocab.len();
        let rank = params.by_index(e1).shape().get(1).copied().unwrap_or(0);
        let ok = params.by_index(emit_w).shape() == [config.d_model, v]
            && params.by_index(emit_b).shape() == [v]
            && params.by_index(e1).shape() == [v, rank]
            && params.by_index(e2).shape() == [v, rank];
        if !ok || rank == 0 {
            return Err(Error::Format("corrector head tensors have inconsistent shapes".into()));
        }
        Ok(Self {
            vocab,
            config,
            rank,
            params,
            layout,
            emit_w,
            emit_b,
            e1,
            e2,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn emissions_var(&self, g: &mut Graph<'_>, vars: &[Var], x: &[TokenId]) -> Result<Var> {
        self.vocab.check_ids(x)?;
        let h = self.layout.forward(&self.config, g, vars, x, false)?;
        let s = g.matmul(h, vars[self.emit_w])?;
        g.add_row(s, vars[self.emit_b])
    }

    pub(crate) fn transitions_var(&self, g: &mut Graph<'_>, vars: &[Var]) -> Result<Var> {
        g.matmul_nt(vars[self.e1], vars[self.e2])
    }

    /// Emission scores (T×V) and transition matrix (V×V) for input `x`.
    pub fn scores(&self, x: &[TokenId]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let e = self.emissions_var(&mut g, &vars, x)?;
        let m = self.transitions_var(&mut g, &vars)?;
        Ok((g.value(e).clone(), g.value(m).clone()))
    }

    /// All six losses on the graph; `log Z` is exact.
    pub(crate) fn loss_vars(&self, g: &mut Graph<'_>, vars: &[Var], x: &[TokenId], y: &[TokenId], gamma: f64) -> Result<LossVars> {
        check_pair(x, y)?;
        self.vocab.check_ids(y)?;
        let v = self.vocab.len();
        let e = self.emissions_var(g, vars, x)?;
        let m = self.transitions_var(g, vars)?;

        let logp = g.log_softmax(e);
        let logp_y = g.pick_per_row(logp, y)?;
        let sum_logp = g.sum(logp_y);
        let dp = g.scale(sum_logp, -1.0);
        let p_y = g.exp(logp_y);
        let q = g.scale(p_y, -1.0);
        let q = g.add_scalar(q, 1.0);
        let q = g.clamp(q, 0.0, 1.0);
        let w = g.powf(q, gamma);
        let weighted = g.mul(w, logp_y)?;
        let weighted = g.sum(weighted);
        let dp_focal = g.scale(weighted, -1.0);

        let emit = g.pick_per_row(e, y)?;
        let emit = g.sum(emit);
        let flat: Vec<usize> = y.windows(2).map(|w| w[0] * v + w[1]).collect();
        let score = if flat.is_empty() {
            emit
        } else {
            let tr = g.take(m, &flat)?;
            let tr = g.sum(tr);
            g.add(emit, tr)?
        };
        let log_z = g.crf_log_partition(e, m)?;
        let crf = g.sub(log_z, score)?;
        let neg = g.scale(crf, -1.0);
        let p_crf = g.exp(neg);
        let q = g.scale(p_crf, -1.0);
        let q = g.add_scalar(q, 1.0);
        let q = g.clamp(q, 0.0, 1.0);
        let w = g.powf(q, gamma);
        let crf_focal = g.mul(w, crf)?;

        let total = g.add(dp, crf)?;
        let total_focal = g.add(dp_focal, crf_focal)?;
        Ok(LossVars {
            dp,
            crf,
            dp_focal,
            crf_focal,
            total,
            total_focal,
        })
    }

    /// The loss `cfg` selects, on the graph.
    pub fn objective_var(&self, g: &mut Graph<'_>, vars: &[Var], x: &[TokenId], y: &[TokenId], cfg: &CrfConfig) -> Result<Var> {
        let l = self.loss_vars(g, vars, x, y, cfg.gamma)?;
        Ok(match (cfg.losses, cfg.focal) {
            (LossSelect::Dp, false) => l.dp,
            (LossSelect::Dp, true) => l.dp_focal,
            (LossSelect::Crf, false) => l.crf,
            (LossSelect::Crf, true) => l.crf_focal,
            (LossSelect::Both, false) => l.total,
            (LossSelect::Both, true) => l.total_focal,
        })
    }

    pub fn losses(&self, x: &[TokenId], y: &[TokenId], cfg: &CrfConfig) -> Result<LossBreakdown> {
        cfg.validate(None)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let l = self.loss_vars(&mut g, &vars, x, y, cfg.gamma)?;
        let val = |v: Var| g.value(v).item();
        Ok(LossBreakdown {
            dp: val(l.dp),
            crf: val(l.crf),
            dp_focal: val(l.dp_focal),
            crf_focal: val(l.crf_focal),
            total: val(l.total),
            total_focal: val(l.total_focal),
        })
    }

    /// `log P(y | x)`, with exact or top-`k` truncated normalization.
    pub fn log_likelihood(&self, x: &[TokenId], y: &[TokenId], exact: bool, k: usize) -> Result<f64> {
        check_pair(x, y)?;
        let (e, m) = self.scores(x)?;
        let z = if exact {
            chain::log_partition(&e, &m)?
        } else {
            chain::log_partition_truncated(&e, &m, k)?
        };
        Ok(chain::path_score(&e, &m, y)? - z)
    }

    /// Best output sequence for `x` under top-`k` truncated Viterbi.
    pub fn viterbi_decode(&self, x: &[TokenId], k: usize) -> Result<Vec<TokenId>> {
        let (e, m) = self.scores(x)?;
        Ok(chain::viterbi(&e, &m, k)?.0)
    }

    /// Per-position label probabilities ignoring transitions.
    pub fn position_log_probs(&self, x: &[TokenId]) -> Result<Tensor> {
        let (e, _) = self.scores(x)?;
        let mut out = e.clone();
        let v = e.cols();
        for (dst, src) in out.data_mut().chunks_mut(v).zip(e.data().chunks(v)) {
            let lse = log_sum_exp(src);
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s - lse);
        }
        Ok(out)
    }

    /// Trains a new corrector on same-length `(input, target)` pairs.
    pub fn train(
        vocab: Vocab,
        config: TransformerConfig,
        rank: usize,
        pairs: &[(Vec<TokenId>, Vec<TokenId>)],
        cfg: &CrfConfig,
        opts: &FitOptions,
    ) -> Result<(Self, FitReport)> {
        cfg.validate(Some(vocab.len()))?;
        if pairs.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        for (x, y) in pairs {
            check_pair(x, y)?;
            if x.len() > config.max_len {
                return Err(Error::Length {
                    len: x.len(),
                    max: config.max_len,
                });
            }
        }
        let model = Self::init(vocab, config, rank, opts.seed)?;
        let mut params = model.params.clone();
        let report = fit(&mut params, pairs, opts, |g, vars, (x, y): &(Vec<TokenId>, Vec<TokenId>)| {
            model.objective_var(g, vars, x, y, cfg)
        })?;
        let trained = Self::from_parts(model.vocab.clone(), config, params)?;
        Ok((trained, report))
    }
}

fn check_pair(x: &[TokenId], y: &[TokenId]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "input has {} tokens but target has {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("empty sentence"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::chain::tests::all_paths;
    use crate::numerics::grad_check;

    fn tiny(seed: u64) -> CrfModel {
        let vocab = Vocab::from_words(["a", "b", "c"]).unwrap();
        let cfg = TransformerConfig {
            d_model: 4,
            n_layers: 1,
            n_heads: 1,
            d_ff: 4,
            max_len: 6,
        };
        let mut m = CrfModel::init(vocab, cfg, 3, seed).unwrap();
        // Larger transition factors so the CRF term matters.
        for name in [TRANS_E1, TRANS_E2] {
            for x in m.params_mut().get_mut(name).unwrap().data_mut() {
                *x *= 8.0;
            }
        }
        m
    }

    #[test]
    fn normalizes_over_all_outputs() {
        let m = tiny(1);
        let x = [7, 8];
        let total: f64 = all_paths(2, m.vocab().len())
            .iter()
            .map(|y| m.log_likelihood(&x, y, true, 1).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn low_rank_identity() {
        let vocab = Vocab::from_words(["a"]).unwrap();
        let v = vocab.len();
        let mut m = CrfModel::init(vocab, TransformerConfig { d_model: 4, n_layers: 1, n_heads: 1, d_ff: 4, max_len: 4 }, v, 0).unwrap();
        *m.params_mut().get_mut(TRANS_E2).unwrap() = Tensor::identity(v);
        let e1 = m.params().get(TRANS_E1).unwrap().clone();
        let (_, t) = m.scores(&[7]).unwrap();
        assert_eq!(t.data(), e1.data());
    }

    #[test]
    fn focal_with_zero_gamma_is_plain() {
        let m = tiny(2);
        let cfg = CrfConfig { gamma: 0.0, ..CrfConfig::default() };
        let l = m.losses(&[7, 8, 9], &[7, 9, 9], &cfg).unwrap();
        assert_eq!(l.dp, l.dp_focal);
        assert_eq!(l.crf, l.crf_focal);
        assert_eq!(l.total, l.total_focal);
        assert_eq!(l.total, l.dp + l.crf);
    }

    #[test]
    fn loss_gradients() {
        let m = tiny(3);
        for gamma in [0.5, 2.0] {
            for sel in [LossSelect::Dp, LossSelect::Crf, LossSelect::Both] {
                for focal in [false, true] {
                    let cfg = CrfConfig { gamma, losses: sel, focal, ..CrfConfig::default() };
                    let err = grad_check(m.params(), |g, vars| m.objective_var(g, vars, &[7, 8, 9], &[7, 9, 9], &cfg), 1e-5, 1).unwrap();
                    assert!(err < 1e-5, "{sel:?} focal={focal} gamma={gamma}: {err}");
                }
            }
        }
    }

    #[test]
    fn length_mismatch() {
        let m = tiny(4);
        assert!(m.log_likelihood(&[7, 8], &[7], true, 1).is_err());
        let bad = CrfConfig { gamma: -1.0, ..CrfConfig::default() };
        assert!(m.losses(&[7], &[7], &bad).is_err());
    }
}
