//! Ranking metrics (RP@K, nDCG@K, P@K, R@K), micro-F1, bucketed reports and
//! the approximate randomization test.
//!
//! Per-document functions take the gold label set as a sorted slice and the
//! ranking as label indices, best first. They return `None` for an empty gold
//! set so callers can exclude such documents.

mod import;
mod report;
mod sigtest;

pub use import::{read_gold, read_predictions, GoldFile, PredictionEntry, PredictionsFile};
pub use report::{bucketed_report, AtK, EvalReport, RankingScope, Scope, ScopeReport, SummaryTable, TableCell};
pub use sigtest::{randomization_test, randomization_test_values, Metric, SigTestResult};

use crate::models::ScoreMatrix;

/// Label indices ordered by descending score; ties go to the lower index.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn is_gold(gold: &[usize], label: usize) -> bool {
    gold.binary_search(&label).is_ok()
}

/// Hits among the first `k` ranked labels.
pub fn hits_at_k(gold: &[usize], ranked: &[usize], k: usize) -> usize {
    ranked.iter().take(k).filter(|&&l| is_gold(gold, l)).count()
}

pub fn precision_at_k(gold: &[usize], ranked: &[usize], k: usize) -> Option<f64> {
    (!gold.is_empty() && k > 0).then(|| hits_at_k(gold, ranked, k) as f64 / k as f64)
}

pub fn recall_at_k(gold: &[usize], ranked: &[usize], k: usize) -> Option<f64> {
    (!gold.is_empty() && k > 0).then(|| hits_at_k(gold, ranked, k) as f64 / gold.len() as f64)
}

/// Hits in the top `k` divided by `min(k, |gold|)`.
pub fn r_precision_at_k(gold: &[usize], ranked: &[usize], k: usize) -> Option<f64> {
    (!gold.is_empty() && k > 0).then(|| hits_at_k(gold, ranked, k) as f64 / k.min(gold.len()) as f64)
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

/// Binary-gain DCG over the top `k`, normalized by the ideal DCG over
/// `min(k, |gold|)` positions.
pub fn ndcg_at_k(gold: &[usize], ranked: &[usize], k: usize) -> Option<f64> {
    if gold.is_empty() || k == 0 {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, l)| is_gold(gold, **l))
        .fold(0.0, |acc, (i, _)| acc + discount(i));
    let ideal = (0..k.min(gold.len())).fold(0.0, |acc, i| acc + discount(i));
    Some(dcg / ideal)
}

/// Pooled confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn of(gold: &[usize], predicted: &[usize]) -> Self {
        let tp = predicted.iter().filter(|&&l| is_gold(gold, l)).count();
        Self {
            tp,
            fp: predicted.len() - tp,
            fn_: gold.len() - tp,
        }
    }

    pub fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }

    /// `2PR / (P + R)`, or 0 when undefined.
    pub fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Micro-averaged F1 over `(predicted positives, gold)` pairs.
pub fn micro_f1<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> f64 {
    pairs
        .into_iter()
        .fold(Counts::default(), |acc, (pred, gold)| acc.add(Counts::of(gold, pred)))
        .f1()
}

/// What a system returned for each document: a ranking (possibly partial)
/// and a set of labels predicted positive, both as sorted-or-ranked label
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub doc_ids: Vec<String>,
    pub rankings: Vec<Vec<usize>>,
    /// Sorted label indices predicted positive.
    pub positives: Vec<Vec<usize>>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

impl Predictions {
    /// Full rankings plus positives `score >= threshold`.
    pub fn from_scores(scores: &ScoreMatrix, threshold: f64) -> Self {
        let rankings = scores.scores.iter().map(|r| rank(r)).collect();
        let positives = scores
            .scores
            .iter()
            .map(|r| (0..r.len()).filter(|&l| r[l] >= threshold).collect())
            .collect();
        Self {
            doc_ids: scores.doc_ids.clone(),
            rankings,
            positives,
        }
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // gold {a, b}, ranked [a, c, b]
        let (a, b, c) = (0, 1, 2);
        let gold = [a, b];
        let ranked = [a, c, b];
        assert_eq!(precision_at_k(&gold, &ranked, 5), Some(0.4));
        assert_eq!(recall_at_k(&gold, &ranked, 5), Some(1.0));
        assert_eq!(r_precision_at_k(&gold, &ranked, 5), Some(1.0));
        let expected = (1.0 + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg_at_k(&gold, &ranked, 5).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn small_cases() {
        assert_eq!(precision_at_k(&[0], &[0], 1), Some(1.0));
        assert_eq!(recall_at_k(&[0], &[0], 1), Some(1.0));
        assert_eq!(precision_at_k(&[0], &[0, 1, 2, 3, 4], 5), Some(0.2));
        assert_eq!(r_precision_at_k(&[0], &[1, 2, 3, 4, 5], 5), Some(0.0));
        assert!((ndcg_at_k(&[0], &[1, 0], 2).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&[0, 1], &[0, 1], 2), Some(1.0));
        assert_eq!(ndcg_at_k(&[5], &[0, 1], 2), Some(0.0));
        assert_eq!(precision_at_k(&[], &[0], 1), None);
        assert_eq!(ndcg_at_k(&[], &[0], 1), None);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank(&[0.5, 0.9, 0.5, 0.1, 0.9]), vec![1, 4, 0, 2, 3]);
    }

    #[test]
    fn micro_f1_cases() {
        let gold: Vec<Vec<usize>> = vec![vec![0, 1], vec![2]];
        assert_eq!(micro_f1(gold.iter().map(|g| (g.as_slice(), g.as_slice()))), 1.0);
        let none: Vec<usize> = vec![];
        assert_eq!(micro_f1(gold.iter().map(|g| (none.as_slice(), g.as_slice()))), 0.0);
        // doc 1: pred {0, 2}, gold {0, 1} -> tp 1, fp 1, fn 1
        // doc 2: pred {2}, gold {2}       -> tp 1
        let pred = [vec![0, 2], vec![2]];
        let f1 = micro_f1(pred.iter().zip(&gold).map(|(p, g)| (p.as_slice(), g.as_slice())));
        assert!((f1 - 2.0 * 2.0 / (2.0 * 2.0 + 1.0 + 1.0)).abs() < 1e-15);
    }
}
