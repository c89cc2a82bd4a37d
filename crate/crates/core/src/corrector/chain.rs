//! Linear-chain CRF algorithms over explicit score tables: emissions `e`
//! (T×V) and transitions `m` (V×V, `m[y', y]` scores `y'` followed by `y`).

use crate::error::{Error, Result};
use crate::numerics::{crf_forward_backward, log_sum_exp, Tensor};

fn dims(e: &Tensor, m: &Tensor) -> Result<(usize, usize)> {
    let (t, v) = e.require_matrix("emissions")?;
    let (a, b) = m.require_matrix("transitions")?;
    if a != v || b != v {
        return Err(Error::invalid(format!(
            "transitions are {a}×{b} but emissions have {v} labels"
        )));
    }
    if t == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    Ok((t, v))
}

/// Unnormalized score of label path `y`.
pub fn path_score(e: &Tensor, m: &Tensor, y: &[usize]) -> Result<f64> {
    let (t, v) = dims(e, m)?;
    if y.len() != t {
        return Err(Error::invalid(format!("path of length {} for {t} positions", y.len())));
    }
    if y.iter().any(|&l| l >= v) {
        return Err(Error::invalid("label out of range"));
    }
    let mut s = 0.0;
    for (i, &l) in y.iter().enumerate() {
        s += e.get2(i, l);
        if i > 0 {
            s += m.get2(y[i - 1], l);
        }
    }
    Ok(s)
}

/// Exact `log Z` by the forward algorithm.
pub fn log_partition(e: &Tensor, m: &Tensor) -> Result<f64> {
    let (t, v) = dims(e, m)?;
    Ok(crf_forward_backward(e.data(), m.data(), t, v).0)
}

/// Per-position label sets kept by truncation. Labels are ranked by
/// `e[t, y] + max_{y'} m[y', y]` (just `e[0, y]` at the first position),
/// best first, ties by lower id. The sets for `k` are prefixes of those for
/// `k + 1`, so truncated scores can only grow with `k`.
pub fn truncated_labels(e: &Tensor, m: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    let (t, v) = dims(e, m)?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let best_in: Vec<f64> = (0..v)
        .map(|y| (0..v).map(|yp| m.get2(yp, y)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok((0..t)
        .map(|i| {
            let key = |y: usize| e.get2(i, y) + if i == 0 { 0.0 } else { best_in[y] };
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
            order.truncate(k);
            order
        })
        .collect())
}

/// `log Z` restricted to the truncated label sets.
pub fn log_partition_truncated(e: &Tensor, m: &Tensor, k: usize) -> Result<f64> {
    let (_, v) = dims(e, m)?;
    if k >= v {
        return log_partition(e, m);
    }
    let sets = truncated_labels(e, m, k)?;
    let mut alpha: Vec<f64> = sets[0].iter().map(|&y| e.get2(0, y)).collect();
    for i in 1..sets.len() {
        alpha = sets[i]
            .iter()
            .map(|&y| {
                let terms: Vec<f64> = sets[i - 1].iter().zip(&alpha).map(|(&yp, a)| a + m.get2(yp, y)).collect();
                e.get2(i, y) + log_sum_exp(&terms)
            })
            .collect();
    }
    Ok(log_sum_exp(&alpha))
}

/// Best path within the truncated label sets and its score. Among equal
/// scores the smaller predecessor id and the smaller final label win.
pub fn viterbi(e: &Tensor, m: &Tensor, k: usize) -> Result<(Vec<usize>, f64)> {
    let sets = truncated_labels(e, m, k)?;
    let sets: Vec<Vec<usize>> = sets
        .into_iter()
        .map(|mut s| {
            s.sort_unstable();
            s
        })
        .collect();
    let mut delta: Vec<f64> = sets[0].iter().map(|&y| e.get2(0, y)).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(sets.len());
    back.push(Vec::new());
    for i in 1..sets.len() {
        let mut nd = Vec::with_capacity(sets[i].len());
        let mut bp = Vec::with_capacity(sets[i].len());
        for &y in &sets[i] {
            let mut best = 0;
            let mut best_s = f64::NEG_INFINITY;
            for (j, &yp) in sets[i - 1].iter().enumerate() {
                let s = delta[j] + m.get2(yp, y);
                if s > best_s {
                    best_s = s;
                    best = j;
                }
            }
            nd.push(best_s + e.get2(i, y));
            bp.push(best);
        }
        delta = nd;
        back.push(bp);
    }
    let mut j = 0;
    for (idx, &d) in delta.iter().enumerate() {
        if d > delta[j] {
            j = idx;
        }
    }
    let score = delta[j];
    let mut path = vec![0; sets.len()];
    for i in (0..sets.len()).rev() {
        path[i] = sets[i][j];
        if i > 0 {
            j = back[i][j];
        }
    }
    Ok((path, score))
}

/// The six losses computed directly from score tables.
pub fn losses(e: &Tensor, m: &Tensor, y: &[usize], gamma: f64) -> Result<super::LossBreakdown> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma = {gamma} must be >= 0")));
    }
    let crf = log_partition(e, m)? - path_score(e, m, y)?;
    let mut dp = 0.0;
    let mut dp_focal = 0.0;
    for (i, &l) in y.iter().enumerate() {
        let lp = e.get2(i, l) - log_sum_exp(e.row(i));
        dp -= lp;
        dp_focal -= (1.0 - lp.exp()).clamp(0.0, 1.0).powf(gamma) * lp;
    }
    let crf_focal = (1.0 - (-crf).exp()).clamp(0.0, 1.0).powf(gamma) * crf;
    Ok(super::LossBreakdown {
        dp,
        crf,
        dp_focal,
        crf_focal,
        total: dp + crf,
        total_focal: dp_focal + crf_focal,
    })
}
