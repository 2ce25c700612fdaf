//! Agreement between a model's progression ranking and the real one.
//!
//! Relevance is binary: an item is relevant iff it is in the real top-k.
//! Average precision is normalized by `min(k, |relevant|)`; NDCG uses unit
//! gains with a `1 / log2(rank + 1)` discount and an ideal ranking that
//! places `min(k, |relevant|)` hits first.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::progressions::ProgressionTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub value: f64,
    /// True when either table has fewer than `n` entries.
    pub truncated: bool,
}

/// Shared fraction of the two top-n lists. When a table has fewer than `n`
/// entries the denominator shrinks to the real table's size (and the result
/// is flagged), so identical small tables still score one.
pub fn topn_overlap(model: &ProgressionTable, real: &ProgressionTable, n: usize) -> Overlap {
    let truncated = model.len() < n || real.len() < n;
    let denom = n.min(real.len());
    if denom == 0 {
        return Overlap { value: 0.0, truncated };
    }
    let real_top: HashSet<_> = real.top(n).into_iter().collect();
    let shared = model.top(n).into_iter().filter(|p| real_top.contains(p)).count();
    Overlap {
        value: shared as f64 / denom as f64,
        truncated,
    }
}

pub fn map_at_k<T: Eq + Hash>(model_ranked: &[T], relevant: &HashSet<T>, k: usize) -> f64 {
    let ideal_hits = k.min(relevant.len());
    if ideal_hits == 0 || model_ranked.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in model_ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / ideal_hits as f64
}

pub fn ndcg_at_k<T: Eq + Hash>(model_ranked: &[T], relevant: &HashSet<T>, k: usize) -> f64 {
    let ideal_hits = k.min(relevant.len());
    if ideal_hits == 0 || model_ranked.is_empty() {
        return 0.0;
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = model_ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..ideal_hits).map(discount).sum();
    dcg / idcg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[char]) -> HashSet<char> {
        items.iter().copied().collect()
    }

    #[test]
    fn hand_example() {
        let rel = set(&['A', 'B', 'C']);
        let model = ['A', 'X', 'B'];
        let ap = map_at_k(&model, &rel, 3);
        assert!((ap - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((ap - 0.5556).abs() < 1e-4);
        let ndcg = ndcg_at_k(&model, &rel, 3);
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2() + 0.5);
        assert!((ndcg - expected).abs() < 1e-12);
        assert!((ndcg - 0.7040).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_empty() {
        let rel = set(&['A', 'B', 'C']);
        assert_eq!(map_at_k(&['C', 'A', 'B'], &rel, 3), 1.0);
        assert_eq!(ndcg_at_k(&['C', 'A', 'B'], &rel, 3), 1.0);
        assert_eq!(map_at_k(&['X', 'Y'], &rel, 3), 0.0);
        assert_eq!(ndcg_at_k(&['X', 'Y'], &rel, 3), 0.0);
        assert_eq!(map_at_k::<char>(&[], &rel, 3), 0.0);
        assert_eq!(ndcg_at_k::<char>(&[], &rel, 3), 0.0);
    }
}
