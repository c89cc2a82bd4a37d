use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::distinct_n;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport<T> {
    pub distinct: BTreeMap<usize, f64>,
    /// Requested orders longer than the sequence.
    pub skipped: Vec<usize>,
    /// Longest n-gram occurring at least twice (occurrences may overlap);
    /// the earliest one when several share the length.
    pub longest_repeat: Vec<T>,
}

/// Start of the earliest `len`-gram that occurs again later.
fn first_repeat<T: Hash + Eq>(tokens: &[T], len: usize) -> Option<usize> {
    let mut seen = HashSet::new();
    let mut repeated = HashSet::new();
    for w in tokens.windows(len) {
        if !seen.insert(w) {
            repeated.insert(w);
        }
    }
    tokens.windows(len).position(|w| repeated.contains(w))
}

pub fn repetition_report<T: Hash + Eq + Clone>(tokens: &[T], n_values: &[usize]) -> Result<RepetitionReport<T>> {
    if tokens.is_empty() {
        return Err(Error::invalid("empty token sequence"));
    }
    let mut distinct = BTreeMap::new();
    let mut skipped = Vec::new();
    for &n in n_values {
        if n == 0 || n > tokens.len() {
            skipped.push(n);
        } else {
            distinct.insert(n, distinct_n(&[tokens], n));
        }
    }
    // Repeats are monotone in length, so binary search the longest.
    let (mut lo, mut hi) = (0usize, tokens.len() - 1);
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if first_repeat(tokens, mid).is_some() {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let longest_repeat = if lo == 0 {
        Vec::new()
    } else {
        let s = first_repeat(tokens, lo).unwrap();
        tokens[s..s + lo].to_vec()
    };
    Ok(RepetitionReport {
        distinct,
        skipped,
        longest_repeat,
    })
}
