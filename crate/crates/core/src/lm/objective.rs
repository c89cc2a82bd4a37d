//! Training objectives: token-level maximum likelihood, the contrastive
//! token-representation objective, and their sum.

use serde::{Deserialize, Serialize};

use super::model::LmModel;
use super::transformer::TransformerConfig;
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{fit, FitOptions, FitReport, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mle,
    #[serde(alias = "simctg")]
    SimCtg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Contrastive margin, in `[-1, 1]`.
    pub rho: f64,
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            objective: Objective::SimCtg,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            learning_rate: 3e-3,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("margin rho = {rho} is outside [-1, 1]")));
    }
    Ok(())
}

/// Drops trailing padding so it never contributes to a loss.
fn unpadded<'s>(model: &LmModel, seq: &'s [TokenId]) -> &'s [TokenId] {
    let pad = model.vocab().specials().pad;
    let end = seq.iter().rposition(|&t| t != pad).map_or(0, |i| i + 1);
    &seq[..end]
}

fn check_len(seq: &[TokenId]) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::invalid(format!(
            "sequence of length {} has no prediction target",
            seq.len()
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of `seq[1..]` given its prefixes.
pub(crate) fn mle_var(model: &LmModel, g: &mut Graph<'_>, vars: &[Var], seq: &[TokenId]) -> Result<(Var, Var)> {
    let seq = unpadded(model, seq);
    check_len(seq)?;
    let hidden = model.hidden_var(g, vars, seq)?;
    let logits = model.logits_var(g, vars, hidden)?;
    let logp = g.log_softmax(logits);
    let rows: Vec<usize> = (0..seq.len() - 1).collect();
    let logp = g.take(
        logp,
        &rows
            .iter()
            .map(|&r| r * model.vocab().len() + seq[r + 1])
            .collect::<Vec<_>>(),
    )?;
    let mean = g.mean(logp);
    Ok((g.scale(mean, -1.0), hidden))
}

/// Contrastive hinge over pairwise cosine similarities of `hidden` rows.
/// Self-similarity is fixed at 1, so each term is `max(0, rho - 1 + s_ij)`.
pub(crate) fn cl_var(g: &mut Graph<'_>, hidden: Var, rho: f64) -> Result<Var> {
    check_rho(rho)?;
    let t = g.value(hidden).rows();
    check_len(&vec![0; t])?;
    let unit = g.normalize_rows(hidden)?;
    let sims = g.matmul_nt(unit, unit)?;
    let sims = g.clamp(sims, -1.0, 1.0);
    let shifted = g.add_scalar(sims, rho - 1.0);
    let hinge = g.relu(shifted);
    let mut mask = Tensor::full(&[t, t], 1.0);
    for i in 0..t {
        mask.data_mut()[i * t + i] = 0.0;
    }
    let mask = g.constant(mask);
    let off_diag = g.mul(hinge, mask)?;
    let total = g.sum(off_diag);
    Ok(g.scale(total, 1.0 / (t * (t - 1)) as f64))
}

fn eval<F>(model: &LmModel, f: F) -> Result<f64>
where
    F: for<'g> FnOnce(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = model.params().bind(&mut g, false);
    let v = f(&mut g, &vars)?;
    Ok(g.value(v).item())
}

/// Batch mean of the per-sequence maximum-likelihood loss.
pub fn loss_mle(model: &LmModel, batch: &[Vec<TokenId>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for seq in batch {
        total += eval(model, |g, vars| Ok(mle_var(model, g, vars, seq)?.0))?;
    }
    Ok(total / batch.len() as f64)
}

/// Contrastive loss of one sequence under `model`.
pub fn loss_cl(model: &LmModel, seq: &[TokenId], rho: f64) -> Result<f64> {
    let seq = unpadded(model, seq);
    check_len(seq)?;
    eval(model, |g, vars| {
        let h = model.hidden_var(g, vars, seq)?;
        cl_var(g, h, rho)
    })
}

/// Contrastive loss over precomputed representations.
pub fn loss_cl_hidden(hidden: &Tensor, rho: f64) -> Result<f64> {
    let mut g = Graph::new();
    let h = g.leaf(hidden, false);
    let l = cl_var(&mut g, h, rho)?;
    Ok(g.value(l).item())
}

/// Contrastive loss of one sequence on the graph.
pub fn cl_seq_var(model: &LmModel, g: &mut Graph<'_>, vars: &[Var], seq: &[TokenId], rho: f64) -> Result<Var> {
    let seq = unpadded(model, seq);
    check_len(seq)?;
    let h = model.hidden_var(g, vars, seq)?;
    cl_var(g, h, rho)
}

/// Batch mean of [`loss_cl`].
pub fn loss_cl_batch(model: &LmModel, batch: &[Vec<TokenId>], rho: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for seq in batch {
        total += loss_cl(model, seq, rho)?;
    }
    Ok(total / batch.len() as f64)
}

/// `loss_mle + loss_cl_batch`, evaluated as exactly that sum.
pub fn loss_simctg(model: &LmModel, batch: &[Vec<TokenId>], rho: f64) -> Result<f64> {
    Ok(loss_mle(model, batch)? + loss_cl_batch(model, batch, rho)?)
}

/// Per-sequence training loss on the graph for `objective`.
pub fn objective_var(
    model: &LmModel,
    g: &mut Graph<'_>,
    vars: &[Var],
    seq: &[TokenId],
    objective: Objective,
    rho: f64,
) -> Result<Var> {
    let (mle, hidden) = mle_var(model, g, vars, seq)?;
    match objective {
        Objective::Mle => Ok(mle),
        Objective::SimCtg => {
            let cl = cl_var(g, hidden, rho)?;
            g.add(mle, cl)
        }
    }
}

/// Trains a freshly initialized model on `corpus`.
pub fn train(
    vocab: Vocab,
    arch: TransformerConfig,
    corpus: &[Vec<TokenId>],
    cfg: &TrainConfig,
) -> Result<(LmModel, FitReport)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    for seq in corpus {
        if seq.len() > arch.max_len {
            return Err(Error::Length {
                len: seq.len(),
                max: arch.max_len,
            });
        }
        check_len(seq)?;
        vocab.check_ids(seq)?;
    }
    let model = LmModel::init(vocab, arch, cfg.seed)?;
    let opts = FitOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        max_steps: cfg.max_steps,
        ..FitOptions::default()
    };
    let mut params = model.params().clone();
    let report = fit(&mut params, corpus, &opts, |g, vars, seq: &Vec<TokenId>| {
        objective_var(&model, g, vars, seq, cfg.objective, cfg.rho)
    })?;
    let trained = LmModel::from_parts(model.vocab().clone(), arch, params)?;
    Ok((trained, report))
}
