//! Mini-batch training loop shared by every model in the crate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::optim::Adam;
use super::params::{accumulate, ParamSet};
use super::rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Number of leading examples used to measure loss before and after.
    pub eval_examples: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 0,
            max_steps: None,
            eval_examples: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Minimizes the mean of `loss` over `examples` with Adam.
///
/// Batches are drawn from a per-epoch shuffle on stream `epoch + 1` of
/// `opts.seed`, so the result depends only on the inputs.
pub fn fit<E, F>(params: &mut ParamSet, examples: &[E], opts: &FitOptions, loss: F) -> Result<FitReport>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var], &E) -> Result<Var>,
{
    if examples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    let mut opt = Adam::new(params, opts.learning_rate)?;
    let eval_set = &examples[..opts.eval_examples.clamp(1, examples.len())];
    let initial_loss = mean_loss(params, eval_set, &loss)?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut steps = 0;
    'outer: for epoch in 0..opts.epochs {
        let mut r = rng::split(opts.seed, epoch as u64 + 1);
        order.shuffle(&mut r);
        let mut running = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for &i in batch {
                let (value, g) = value_and_grad(params, &examples[i], &loss)?;
                running += value;
                seen += 1;
                accumulate(&mut grads, &g);
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            opt.step(params, &grads)?;
            steps += 1;
            if opts.max_steps.is_some_and(|m| steps >= m) {
                epoch_losses.push(running / seen as f64);
                break 'outer;
            }
        }
        epoch_losses.push(running / seen.max(1) as f64);
    }
    params.check_finite()?;
    let final_loss = mean_loss(params, eval_set, &loss)?;
    Ok(FitReport {
        initial_loss,
        final_loss,
        epoch_losses,
        steps,
    })
}

fn value_and_grad<E, F>(params: &ParamSet, example: &E, loss: &F) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var], &E) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let l = loss(&mut g, &vars, example)?;
    let value = g.value(l).item();
    if !value.is_finite() {
        return Err(Error::NumericFailure(format!("training loss became {value}")));
    }
    let grads = g.backward(l)?;
    Ok((value, params.collect_grads(&grads, &vars)))
}

pub fn mean_loss<E, F>(params: &ParamSet, examples: &[E], loss: &F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var], &E) -> Result<Var>,
{
    let mut total = 0.0;
    for e in examples {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let l = loss(&mut g, &vars, e)?;
        total += g.value(l).item();
    }
    Ok(total / examples.len() as f64)
}
