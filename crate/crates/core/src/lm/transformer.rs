//! Post-norm Transformer encoder shared by the causal language model and
//! the bidirectional correction and masked-prediction models.
//!
//! Each layer computes `H' = LN(Attn(H) + H)` followed by
//! `H'' = LN(FFN(H') + H')`. Input rows are token plus position embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init_normal, rng::Rng, Graph, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            max_len: 128,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::invalid("max_len must be at least 2"));
        }
        if self.d_ff == 0 {
            return Err(Error::invalid("d_ff must be positive"));
        }
        Ok(())
    }
}

/// Positions of the encoder tensors inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerLayout>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerLayout {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln1_g: usize,
    ln1_b: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
    ln2_g: usize,
    ln2_b: usize,
}

const LAYER_PARTS: [&str; 12] = [
    "wq", "wk", "wv", "wo", "ln1.g", "ln1.b", "ff1.w", "ff1.b", "ff2.w", "ff2.b", "ln2.g", "ln2.b",
];

impl EncoderLayout {
    /// Adds freshly initialized encoder tensors to `params`.
    pub fn init(cfg: &TransformerConfig, vocab_size: usize, params: &mut ParamSet, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let tok = params.insert("tok_emb", init_normal(&[vocab_size, d], 0.1, rng));
        let pos = params.insert("pos_emb", init_normal(&[cfg.max_len, d], 0.1, rng));
        let attn_std = 1.0 / (d as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let name = |p: &str| format!("layer{l}.{p}");
            layers.push(LayerLayout {
                wq: params.insert(name("wq"), init_normal(&[d, d], attn_std, rng)),
                wk: params.insert(name("wk"), init_normal(&[d, d], attn_std, rng)),
                wv: params.insert(name("wv"), init_normal(&[d, d], attn_std, rng)),
                wo: params.insert(name("wo"), init_normal(&[d, d], attn_std, rng)),
                ln1_g: params.insert(name("ln1.g"), Tensor::full(&[d], 1.0)),
                ln1_b: params.insert(name("ln1.b"), Tensor::zeros(&[d])),
                ff1_w: params.insert(name("ff1.w"), init_normal(&[d, cfg.d_ff], attn_std, rng)),
                ff1_b: params.insert(name("ff1.b"), Tensor::zeros(&[cfg.d_ff])),
                ff2_w: params.insert(
                    name("ff2.w"),
                    init_normal(&[cfg.d_ff, d], 1.0 / (cfg.d_ff as f64).sqrt(), rng),
                ),
                ff2_b: params.insert(name("ff2.b"), Tensor::zeros(&[d])),
                ln2_g: params.insert(name("ln2.g"), Tensor::full(&[d], 1.0)),
                ln2_b: params.insert(name("ln2.b"), Tensor::zeros(&[d])),
            });
        }
        Ok(Self { tok, pos, layers })
    }

    /// Recovers the layout of a loaded parameter set and checks shapes.
    pub fn locate(cfg: &TransformerConfig, vocab_size: usize, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let find = |name: &str, shape: &[usize]| -> Result<usize> {
            let i = params
                .index_of(name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if params.by_index(i).shape() != shape {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    params.by_index(i).shape()
                )));
            }
            Ok(i)
        };
        let tok = find("tok_emb", &[vocab_size, d])?;
        let pos = find("pos_emb", &[cfg.max_len, d])?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let shapes: [Vec<usize>; 12] = [
                vec![d, d],
                vec![d, d],
                vec![d, d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d, cfg.d_ff],
                vec![cfg.d_ff],
                vec![cfg.d_ff, d],
                vec![d],
                vec![d],
                vec![d],
            ];
            let mut idx = [0usize; 12];
            for (k, (part, shape)) in LAYER_PARTS.iter().zip(&shapes).enumerate() {
                idx[k] = find(&format!("layer{l}.{part}"), shape)?;
            }
            layers.push(LayerLayout {
                wq: idx[0],
                wk: idx[1],
                wv: idx[2],
                wo: idx[3],
                ln1_g: idx[4],
                ln1_b: idx[5],
                ff1_w: idx[6],
                ff1_b: idx[7],
                ff2_w: idx[8],
                ff2_b: idx[9],
                ln2_g: idx[10],
                ln2_b: idx[11],
            });
        }
        Ok(Self { tok, pos, layers })
    }

    /// Final-layer hidden states (T×d) for `ids`. `vars` are the graph
    /// leaves of the whole parameter set in insertion order.
    pub fn forward(
        &self,
        cfg: &TransformerConfig,
        g: &mut Graph<'_>,
        vars: &[Var],
        ids: &[usize],
        causal: bool,
    ) -> Result<Var> {
        let t = ids.len();
        if t == 0 {
            return Err(Error::invalid("empty input sequence"));
        }
        if t > cfg.max_len {
            return Err(Error::Length {
                len: t,
                max: cfg.max_len,
            });
        }
        let positions: Vec<usize> = (0..t).collect();
        let tok = g.gather_rows(vars[self.tok], ids)?;
        let pos = g.gather_rows(vars[self.pos], &positions)?;
        let mut h = g.add(tok, pos)?;

        let dh = cfg.d_model / cfg.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in &self.layers {
            let q = g.matmul(h, vars[layer.wq])?;
            let k = g.matmul(h, vars[layer.wk])?;
            let v = g.matmul(h, vars[layer.wv])?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = g.slice_cols(q, head * dh, dh)?;
                let kh = g.slice_cols(k, head * dh, dh)?;
                let vh = g.slice_cols(v, head * dh, dh)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, scale);
                let attn = g.softmax(scores, causal);
                heads.push(g.matmul(attn, vh)?);
            }
            let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let attn_out = g.matmul(merged, vars[layer.wo])?;
            let res = g.add(attn_out, h)?;
            let h1 = g.layer_norm(res, vars[layer.ln1_g], vars[layer.ln1_b])?;

            let ff = g.matmul(h1, vars[layer.ff1_w])?;
            let ff = g.add_row(ff, vars[layer.ff1_b])?;
            let ff = g.gelu(ff);
            let ff = g.matmul(ff, vars[layer.ff2_w])?;
            let ff = g.add_row(ff, vars[layer.ff2_b])?;
            let res = g.add(ff, h1)?;
            h = g.layer_norm(res, vars[layer.ln2_g], vars[layer.ln2_b])?;
        }
        Ok(h)
    }
}
