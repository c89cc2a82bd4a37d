//! Bidirectional masked-prediction model: the encoder without the causal
//! mask plus an output projection, trained to predict single positions.

use serde::{Deserialize, Serialize};

use super::model::OUT_PROJ;
use super::transformer::{EncoderLayout, TransformerConfig};
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{argmax, fit, init_normal, rng, softmax, FitOptions, FitReport, Graph, ParamSet, Tensor, Var};

/// Input sequence, the position to predict and its target id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub input: Vec<TokenId>,
    pub position: usize,
    pub target: TokenId,
}

#[derive(Debug, Clone)]
pub struct MaskedLm {
    vocab: Vocab,
    config: TransformerConfig,
    params: ParamSet,
    layout: EncoderLayout,
    out_proj: usize,
}

impl MaskedLm {
    pub fn init(vocab: Vocab, config: TransformerConfig, seed: u64) -> Result<Self> {
        let mut r = rng::split(seed, 0);
        let mut params = ParamSet::new();
        let layout = EncoderLayout::init(&config, vocab.len(), &mut params, &mut r)?;
        let std = 1.0 / (config.d_model as f64).sqrt();
        let out_proj = params.insert(OUT_PROJ, init_normal(&[config.d_model, vocab.len()], std, &mut r));
        Ok(Self {
            vocab,
            config,
            params,
            layout,
            out_proj,
        })
    }

    pub fn from_parts(vocab: Vocab, config: TransformerConfig, params: ParamSet) -> Result<Self> {
        let layout = EncoderLayout::locate(&config, vocab.len(), &params)?;
        let out_proj = params
            .index_of(OUT_PROJ)
            .ok_or_else(|| Error::Format(format!("missing tensor {OUT_PROJ}")))?;
        if params.by_index(out_proj).shape() != [config.d_model, vocab.len()] {
            return Err(Error::Format("out_proj has the wrong shape".into()));
        }
        Ok(Self {
            vocab,
            config,
            params,
            layout,
            out_proj,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn logits_var(&self, g: &mut Graph<'_>, vars: &[Var], ids: &[TokenId]) -> Result<Var> {
        self.vocab.check_ids(ids)?;
        let h = self.layout.forward(&self.config, g, vars, ids, false)?;
        g.matmul(h, vars[self.out_proj])
    }

    /// Logits for every position (T×V).
    pub fn logits(&self, ids: &[TokenId]) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let l = self.logits_var(&mut g, &vars, ids)?;
        Ok(g.value(l).clone())
    }

    /// Predictive distribution at `position`.
    pub fn dist_at(&self, ids: &[TokenId], position: usize) -> Result<Vec<f64>> {
        if position >= ids.len() {
            return Err(Error::invalid(format!("position {position} outside a sequence of {}", ids.len())));
        }
        Ok(softmax(self.logits(ids)?.row(position)))
    }

    /// Most probable token at `position` and its probability.
    pub fn predict_at(&self, ids: &[TokenId], position: usize) -> Result<(TokenId, f64)> {
        let p = self.dist_at(ids, position)?;
        let t = argmax(&p);
        Ok((t, p[t]))
    }

    pub(crate) fn instance_loss(&self, g: &mut Graph<'_>, vars: &[Var], inst: &MaskedInstance) -> Result<Var> {
        let logits = self.logits_var(g, vars, &inst.input)?;
        let logp = g.log_softmax(logits);
        let v = self.vocab.len();
        let picked = g.take(logp, &[inst.position * v + inst.target])?;
        let s = g.sum(picked);
        Ok(g.scale(s, -1.0))
    }

    /// Fits to `instances` by cross-entropy at the masked positions.
    pub fn train(
        vocab: Vocab,
        config: TransformerConfig,
        instances: &[MaskedInstance],
        opts: &FitOptions,
    ) -> Result<(Self, FitReport)> {
        if instances.is_empty() {
            return Err(Error::invalid("no training instances"));
        }
        for inst in instances {
            if inst.position >= inst.input.len() {
                return Err(Error::invalid("masked position outside its input"));
            }
            if inst.input.len() > config.max_len {
                return Err(Error::Length {
                    len: inst.input.len(),
                    max: config.max_len,
                });
            }
            vocab.check_ids(&inst.input)?;
            vocab.check_ids(&[inst.target])?;
        }
        let model = Self::init(vocab, config, opts.seed)?;
        let mut params = model.params.clone();
        let report = fit(&mut params, instances, opts, |g, vars, inst: &MaskedInstance| {
            model.instance_loss(g, vars, inst)
        })?;
        let trained = Self::from_parts(model.vocab.clone(), config, params)?;
        Ok((trained, report))
    }
}
