use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::params::ParamSet;
use super::rng;
use crate::error::{Error, Result};

/// Coordinates checked when no explicit budget is given.
pub const DEFAULT_COORDS: usize = 512;

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `h` on up to [`DEFAULT_COORDS`] coordinates chosen with `seed`.
/// Returns `max |analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(params: &ParamSet, loss: F, h: f64, seed: u64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    grad_check_coords(params, loss, h, seed, DEFAULT_COORDS)
}

pub fn grad_check_coords<F>(params: &ParamSet, loss: F, h: f64, seed: u64, max_coords: usize) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::invalid(format!("step h must lie in (0, 1e-3], got {h}")));
    }
    params.check_finite()?;

    let analytic = {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, true);
        let l = loss(&mut g, &vars)?;
        check_finite(g.value(l).item())?;
        let grads = g.backward(l)?;
        params.collect_grads(&grads, &vars)
    };

    let total = params.num_scalars();
    let mut coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut r = rng::seeded(seed);
        sample(&mut r, total, max_coords).into_vec()
    };
    coords.sort_unstable();

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let l = loss(&mut g, &vars)?;
        let v = g.value(l).item();
        check_finite(v)?;
        Ok(v)
    };

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for flat in coords {
        let (ti, off) = locate(params, flat);
        let orig = params.by_index(ti).data()[off];
        work.tensors_mut()[ti].data_mut()[off] = orig + h;
        let up = eval(&work)?;
        work.tensors_mut()[ti].data_mut()[off] = orig - h;
        let down = eval(&work)?;
        work.tensors_mut()[ti].data_mut()[off] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[ti].data()[off];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn locate(params: &ParamSet, mut flat: usize) -> (usize, usize) {
    for (i, t) in params.tensors().iter().enumerate() {
        if flat < t.len() {
            return (i, flat);
        }
        flat -= t.len();
    }
    unreachable!("coordinate out of range")
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure(format!("loss evaluated to {v}")))
    }
}
