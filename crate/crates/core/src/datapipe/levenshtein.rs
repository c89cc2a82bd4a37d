use std::collections::BTreeSet;

/// Minimum number of single-token insertions, deletions and substitutions
/// turning `a` into `b`.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Keep,
    /// Replace `a[i]`.
    Substitute,
    /// Drop `a[i]`.
    Delete,
    /// Insert a `b` token before `a[i]`.
    Insert,
}

/// One minimal edit script from `a` to `b`, as `(op, position in a)`.
/// Prefers substitutions, then deletions, then insertions when several
/// scripts are optimal.
pub fn align<T: PartialEq>(a: &[T], b: &[T]) -> Vec<(AlignOp, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            let op = if a[i - 1] == b[j - 1] { AlignOp::Keep } else { AlignOp::Substitute };
            ops.push((op, i - 1));
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push((AlignOp::Delete, i - 1));
            i -= 1;
        } else {
            ops.push((AlignOp::Insert, i));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Positions of `a` touched by a minimal edit script to `b`.
pub fn edit_positions<T: PartialEq>(a: &[T], b: &[T]) -> BTreeSet<usize> {
    if a.len() == b.len() {
        return (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    }
    align(a, b)
        .into_iter()
        .filter(|(op, _)| *op != AlignOp::Keep)
        .map(|(_, i)| i)
        .collect()
}
