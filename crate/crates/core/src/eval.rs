//! Ranking metrics with binary relevance.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

/// Precision and recall of the top-k. A list shorter than k is evaluated in
/// full with k kept in the precision denominator.
pub fn precision_recall_at_k<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>, k: usize) -> (f64, f64) {
    assert!(k >= 1, "k must be positive");
    assert!(!truth.is_empty(), "truth must be non-empty");
    let hits = ranked.iter().take(k).filter(|x| truth.contains(*x)).count() as f64;
    (hits / k as f64, hits / truth.len() as f64)
}

/// nDCG@p with discount log₂(i + 1).
pub fn ndcg_at_p<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>, p: usize) -> f64 {
    assert!(p >= 1, "p must be positive");
    assert!(!truth.is_empty(), "truth must be non-empty");
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(p)
        .enumerate()
        .filter(|(_, x)| truth.contains(*x))
        .map(|(i, _)| discount(i))
        .sum();
    if dcg == 0.0 {
        return 0.0;
    }
    let ideal: f64 = (0..p.min(truth.len())).map(discount).sum();
    dcg / ideal
}

/// Default k: twice the number of true root causes.
pub fn default_k(m: usize) -> usize {
    (2 * m).max(1)
}

/// Default p: one less than the number of true root causes, at least 1.
pub fn default_p(m: usize) -> usize {
    m.saturating_sub(1).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub ndcg_at_p: f64,
    pub k: usize,
    pub p: usize,
}

pub fn evaluate<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>, k: usize, p: usize) -> MetricReport {
    let (precision_at_k, recall_at_k) = precision_recall_at_k(ranked, truth, k);
    MetricReport {
        precision_at_k,
        recall_at_k,
        ndcg_at_p: ndcg_at_p(ranked, truth, p),
        k,
        p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[&'static str]) -> HashSet<&'static str> {
        xs.iter().copied().collect()
    }

    #[test]
    fn precision_recall_examples() {
        assert_eq!(precision_recall_at_k(&["a", "c", "b", "d"], &set(&["a", "b"]), 2), (0.5, 0.5));
        assert_eq!(precision_recall_at_k(&["b", "a", "c"], &set(&["a", "b"]), 2), (1.0, 1.0));
        assert_eq!(precision_recall_at_k(&["c", "d", "a"], &set(&["a", "b"]), 2), (0.0, 0.0));
        // shorter list than k keeps k in the denominator
        assert_eq!(precision_recall_at_k(&["a"], &set(&["a", "b"]), 4), (0.25, 0.5));
    }

    #[test]
    fn ndcg_examples() {
        let v = ndcg_at_p(&["a", "c", "b"], &set(&["a", "b"]), 2);
        let ideal = 1.0 + 1.0 / 3f64.log2();
        assert!((v - 1.0 / ideal).abs() < 1e-15);
        assert!((v - 0.6131).abs() < 1e-4);
        assert_eq!(ndcg_at_p(&["a", "b", "c"], &set(&["a", "b"]), 2), 1.0);
        assert_eq!(ndcg_at_p(&["b", "a", "c"], &set(&["a", "b", "c"]), 2), 1.0);
        assert_eq!(ndcg_at_p(&["c", "d", "a"], &set(&["a", "b"]), 2), 0.0);
    }

    #[test]
    fn defaults() {
        assert_eq!((default_k(3), default_p(3)), (6, 2));
        assert_eq!(default_p(1), 1);
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_relabel_invariant(
            perm in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle(),
            truth_mask in proptest::collection::vec(any::<bool>(), 12),
            k in 1usize..14,
            p in 1usize..14,
            shift in 1usize..50,
        ) {
            let truth: HashSet<usize> = (0..12).filter(|&i| truth_mask[i]).collect();
            prop_assume!(!truth.is_empty());
            let r = evaluate(&perm, &truth, k, p);
            for v in [r.precision_at_k, r.recall_at_k, r.ndcg_at_p] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let relabel = |x: &usize| (x + shift) * 7;
            let perm2: Vec<usize> = perm.iter().map(relabel).collect();
            let truth2: HashSet<usize> = truth.iter().map(relabel).collect();
            prop_assert_eq!(evaluate(&perm2, &truth2, k, p), r);
            let mut ideal: Vec<usize> = truth.iter().copied().collect();
            ideal.sort();
            prop_assert_eq!(ndcg_at_p(&ideal, &truth, truth.len()), 1.0);
        }
    }
}
