//! Word Mover's Distance: exact optimal transport between normalized
//! bag-of-words histograms under Euclidean ground cost.

use std::collections::BTreeMap;

use super::embeddings::Embeddings;
use crate::error::{Error, Result};

/// Largest number of distinct tokens per side accepted by [`wmd`].
pub const MAX_SUPPORT: usize = 64;

const FLOW_EPS: f64 = 1e-12;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distinct tokens with normalized counts, in first-appearance order.
pub fn nbow<S: AsRef<str>>(tokens: &[S]) -> Vec<(String, f64)> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        counts.entry(t.as_ref()).or_insert((i, 0)).1 += 1;
    }
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by_key(|(_, (first, _))| *first);
    let n = tokens.len() as f64;
    v.into_iter().map(|(t, (_, c))| (t.to_string(), c as f64 / n)).collect()
}

pub fn wmd<S: AsRef<str>>(a: &[S], b: &[S], emb: &Embeddings) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("WMD needs two nonempty sentences"));
    }
    let (pa, pb) = (nbow(a), nbow(b));
    if pa.len() > MAX_SUPPORT || pb.len() > MAX_SUPPORT {
        return Err(Error::invalid(format!(
            "WMD supports at most {MAX_SUPPORT} distinct tokens per side, got {} and {}",
            pa.len(),
            pb.len()
        )));
    }
    let mut cost = vec![vec![0.0; pb.len()]; pa.len()];
    for (i, (ta, _)) in pa.iter().enumerate() {
        let va = emb.get(ta)?;
        for (j, (tb, _)) in pb.iter().enumerate() {
            cost[i][j] = euclid(va, emb.get(tb)?);
        }
    }
    let supply: Vec<f64> = pa.iter().map(|p| p.1).collect();
    let demand: Vec<f64> = pb.iter().map(|p| p.1).collect();
    Ok(transport(&supply, &demand, &cost).0)
}

/// Euclidean distance between the mean embeddings; a lower bound on WMD.
pub fn word_centroid_distance<S: AsRef<str>>(a: &[S], b: &[S], emb: &Embeddings) -> Result<f64> {
    Ok(euclid(&emb.mean_pool(a)?, &emb.mean_pool(b)?))
}

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Minimum-cost transportation plan from `supply` to `demand` (equal
/// totals) by successive shortest paths. Returns the cost and the plan.
pub fn transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let (m, n) = (supply.len(), demand.len());
    let source = m + n;
    let sink = source + 1;
    let nodes = sink + 1;
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, u: usize, v: usize, cap: f64, c: f64| {
        adj[u].push(edges.len());
        edges.push(Edge { to: v, cap, cost: c });
        adj[v].push(edges.len());
        edges.push(Edge { to: u, cap: 0.0, cost: -c });
    };
    for (i, &s) in supply.iter().enumerate() {
        add(&mut edges, &mut adj, source, i, s, 0.0);
    }
    let mut cell = vec![vec![0usize; n]; m];
    for i in 0..m {
        for j in 0..n {
            cell[i][j] = edges.len();
            add(&mut edges, &mut adj, i, m + j, f64::INFINITY, cost[i][j]);
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        add(&mut edges, &mut adj, m + j, sink, d, 0.0);
    }

    let mut remaining: f64 = supply.iter().sum::<f64>().min(demand.iter().sum());
    let mut total = 0.0;
    while remaining > FLOW_EPS {
        // Bellman-Ford over the residual graph; it has negative edges.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via = vec![usize::MAX; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if !dist[u].is_finite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > FLOW_EPS && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let mut push = remaining;
        let mut v = sink;
        while v != source {
            let e = via[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = via[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        total += push * dist[sink];
        remaining -= push;
    }
    let plan: Vec<Vec<f64>> = cell
        .iter()
        .map(|row| row.iter().map(|&e| edges[e ^ 1].cap).collect())
        .collect();
    (total, plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;
    use rand::Rng as _;

    /// Minimum cost over all basic feasible transportation plans: every
    /// choice of m+n-1 cells that forms a spanning tree, solved by peeling
    /// rows and columns with a single unsolved cell.
    pub(crate) fn vertex_oracle(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
        let (m, n) = (supply.len(), demand.len());
        let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let k = m + n - 1;
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << cells.len()) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let basis: Vec<(usize, usize)> = (0..cells.len()).filter(|b| mask >> b & 1 == 1).map(|b| cells[b]).collect();
            let mut rs = supply.to_vec();
            let mut cs = demand.to_vec();
            let mut x: Vec<Option<f64>> = vec![None; basis.len()];
            let mut progress = true;
            while progress {
                progress = false;
                for i in 0..m {
                    let open: Vec<usize> = (0..basis.len()).filter(|&b| basis[b].0 == i && x[b].is_none()).collect();
                    if open.len() == 1 {
                        let b = open[0];
                        x[b] = Some(rs[i]);
                        cs[basis[b].1] -= rs[i];
                        rs[i] = 0.0;
                        progress = true;
                    }
                }
                for j in 0..n {
                    let open: Vec<usize> = (0..basis.len()).filter(|&b| basis[b].1 == j && x[b].is_none()).collect();
                    if open.len() == 1 {
                        let b = open[0];
                        x[b] = Some(cs[j]);
                        rs[basis[b].0] -= cs[j];
                        cs[j] = 0.0;
                        progress = true;
                    }
                }
            }
            if x.iter().any(Option::is_none) || x.iter().any(|v| v.unwrap() < -1e-12) {
                continue;
            }
            if rs.iter().chain(&cs).any(|r| r.abs() > 1e-12) {
                continue;
            }
            let c: f64 = basis.iter().zip(&x).map(|(&(i, j), v)| cost[i][j] * v.unwrap()).sum();
            best = best.min(c);
        }
        best
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn plane() -> Embeddings {
        Embeddings::from_pairs([
            ("a", vec![0.0, 0.0]),
            ("b", vec![3.0, 4.0]),
            ("c", vec![1.0, 0.0]),
            ("d", vec![0.0, 2.0]),
            ("e", vec![-1.0, 1.0]),
            ("f", vec![2.0, -1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn identity_and_single_words() {
        let e = plane();
        assert_eq!(wmd(&toks("a b c"), &toks("c a b"), &e).unwrap(), 0.0);
        assert!((wmd(&toks("a"), &toks("b"), &e).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn three_by_three_hand_case() {
        let e = plane();
        let a = toks("a a b c");
        let b = toks("d e f f");
        let got = wmd(&a, &b, &e).unwrap();
        let (pa, pb) = (nbow(&a), nbow(&b));
        let cost: Vec<Vec<f64>> = pa
            .iter()
            .map(|(x, _)| pb.iter().map(|(y, _)| euclid(e.get(x).unwrap(), e.get(y).unwrap())).collect())
            .collect();
        let s: Vec<f64> = pa.iter().map(|p| p.1).collect();
        let d: Vec<f64> = pb.iter().map(|p| p.1).collect();
        assert_eq!(s, vec![0.5, 0.25, 0.25]);
        let oracle = vertex_oracle(&s, &d, &cost);
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn plan_is_feasible() {
        let cost = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        let (c, plan) = transport(&[0.7, 0.3], &[0.4, 0.6], &cost);
        for (i, s) in [0.7, 0.3].iter().enumerate() {
            assert!((plan[i].iter().sum::<f64>() - s).abs() < 1e-12);
        }
        assert!((c - vertex_oracle(&[0.7, 0.3], &[0.4, 0.6], &cost)).abs() < 1e-12);
    }

    #[test]
    fn random_pairs_symmetric_and_bounded() {
        let mut r = rng::seeded(11);
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let emb = Embeddings::from_pairs(
            words.iter().map(|w| (w.clone(), (0..3).map(|_| r.random_range(-1.0..1.0)).collect())),
        )
        .unwrap();
        for _ in 0..50 {
            let mut draw = || -> Vec<String> {
                let len = r.random_range(1..6);
                (0..len).map(|_| words[r.random_range(0..12)].clone()).collect()
            };
            let (a, b) = (draw(), draw());
            let ab = wmd(&a, &b, &emb).unwrap();
            let ba = wmd(&b, &a, &emb).unwrap();
            assert!((ab - ba).abs() < 1e-9);
            assert!(ab + 1e-9 >= word_centroid_distance(&a, &b, &emb).unwrap());
            assert!(wmd(&a, &a, &emb).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let e = plane();
        assert!(matches!(wmd(&toks("a zz"), &toks("b"), &e), Err(Error::Lookup(_))));
        assert!(wmd::<&str>(&[], &toks("b"), &e).is_err());
    }
}
