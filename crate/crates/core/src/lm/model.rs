use super::transformer::{EncoderLayout, TransformerConfig};
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{init_normal, rng, softmax, Graph, ParamSet, Tensor, Var};

pub const OUT_PROJ: &str = "out_proj";

/// Final-layer token representations, one row per input position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates(pub Tensor);

impl HiddenStates {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }
}

/// Causal self-attention language model.
#[derive(Debug, Clone)]
pub struct LmModel {
    vocab: Vocab,
    config: TransformerConfig,
    params: ParamSet,
    layout: EncoderLayout,
    out_proj: usize,
}

impl LmModel {
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

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn check(&self, ids: &[TokenId]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Length {
                len: ids.len(),
                max: self.config.max_len,
            });
        }
        self.vocab.check_ids(ids)
    }

    pub(crate) fn hidden_var(&self, g: &mut Graph<'_>, vars: &[Var], ids: &[TokenId]) -> Result<Var> {
        self.check(ids)?;
        self.layout.forward(&self.config, g, vars, ids, true)
    }

    pub(crate) fn logits_var(&self, g: &mut Graph<'_>, vars: &[Var], hidden: Var) -> Result<Var> {
        g.matmul(hidden, vars[self.out_proj])
    }

    /// Token representations for `ids`; row `i` depends only on `ids[..=i]`.
    pub fn encode(&self, ids: &[TokenId]) -> Result<HiddenStates> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let h = self.hidden_var(&mut g, &vars, ids)?;
        Ok(HiddenStates(g.value(h).clone()))
    }

    /// Hidden states and next-token logits for every position.
    pub fn forward(&self, ids: &[TokenId]) -> Result<(HiddenStates, Tensor)> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let h = self.hidden_var(&mut g, &vars, ids)?;
        let logits = self.logits_var(&mut g, &vars, h)?;
        Ok((HiddenStates(g.value(h).clone()), g.value(logits).clone()))
    }

    /// `p(· | prefix)` over the whole vocabulary.
    pub fn next_dist(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let (_, logits) = self.forward(prefix)?;
        Ok(softmax(logits.row(logits.rows() - 1)))
    }
}
