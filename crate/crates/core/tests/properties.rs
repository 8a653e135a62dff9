use proptest::prelude::*;

use xmtc_core::metrics::{
    bucketed_report, ndcg_at_k, precision_at_k, r_precision_at_k, randomization_test, rank, recall_at_k, Metric,
    Predictions, RankingScope, Scope,
};
use xmtc_core::data::Bucket;
use xmtc_core::models::{Architecture, ModelConfig};

/// A gold set and a permutation of `0..labels`.
fn instance() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..=20).prop_flat_map(|labels| {
        (
            proptest::sample::subsequence((0..labels).collect::<Vec<_>>(), 1..=labels),
            Just((0..labels).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #[test]
    fn ranking_metrics_are_bounded((gold, ranked) in instance(), k in 1usize..=10) {
        let p = precision_at_k(&gold, &ranked, k).unwrap();
        let r = recall_at_k(&gold, &ranked, k).unwrap();
        let rp = r_precision_at_k(&gold, &ranked, k).unwrap();
        let n = ndcg_at_k(&gold, &ranked, k).unwrap();
        for v in [p, r, rp, n] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(rp >= p && rp >= r);
        if k >= gold.len() {
            prop_assert_eq!(rp, r);
        }
        if k <= gold.len() {
            prop_assert_eq!(rp, p);
        }
    }

    #[test]
    fn perfect_ranking_scores_one((gold, rest) in instance(), k in 1usize..=10) {
        let mut ranked = gold.clone();
        ranked.extend(rest.into_iter().filter(|l| !gold.contains(l)));
        prop_assert_eq!(r_precision_at_k(&gold, &ranked, k), Some(1.0));
        prop_assert!((ndcg_at_k(&gold, &ranked, k).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_breaks_ties_by_index(scores in proptest::collection::vec(0u8..4, 1..30)) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let r = rank(&s);
        for w in r.windows(2) {
            prop_assert!(s[w[0]] > s[w[1]] || (s[w[0]] == s[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn config_text_round_trips(
        arch in proptest::sample::select(Architecture::ALL.to_vec()),
        units in 1usize..500,
        layers in 1usize..=2,
        dropout in 0.0f64..0.9,
        scale in any::<bool>(),
    ) {
        let c = ModelConfig {
            architecture: arch,
            enc_units: units,
            enc_layers: layers,
            dropout,
            scale_by_length: scale,
            ..ModelConfig::default()
        };
        prop_assert_eq!(ModelConfig::parse(&c.to_text()).unwrap(), c);
    }
}

fn predictions(rankings: Vec<Vec<usize>>) -> Predictions {
    Predictions {
        doc_ids: (0..rankings.len()).map(|i| format!("d{i}")).collect(),
        positives: rankings.iter().map(|r| r[..1].to_vec()).collect(),
        rankings,
    }
}

#[test]
fn identical_systems_are_not_significant() {
    let gold: Vec<Vec<usize>> = (0..30).map(|i| vec![i % 6]).collect();
    let a = predictions((0..30).map(|i| (0..6).map(|l| (l + i) % 6).collect()).collect());
    let r = randomization_test(&a, &a, &gold, Metric::RPrecision(2), 1000, 0).unwrap();
    assert_eq!((r.at_least_as_extreme, r.p_value), (1000, 1.0));
}

#[test]
fn clearly_better_system_is_significant() {
    let gold: Vec<Vec<usize>> = (0..60).map(|i| vec![i % 6]).collect();
    let good = predictions((0..60).map(|i| {
        let g = i % 6;
        std::iter::once(g).chain((0..6).filter(|&l| l != g)).collect()
    }).collect());
    let bad = predictions((0..60).map(|i| {
        let g = i % 6;
        (0..6).filter(|&l| l != g).chain(std::iter::once(g)).collect()
    }).collect());
    for metric in [Metric::RPrecision(1), Metric::Ndcg(3), Metric::MicroF1] {
        let r = randomization_test(&good, &bad, &gold, metric, 2000, 1).unwrap();
        assert!(r.p_value < 0.01, "{metric}: {}", r.p_value);
        assert_eq!(r.p_value, (r.at_least_as_extreme + 1) as f64 / 2001.0);
    }
    assert!(randomization_test(&good, &bad, &gold, Metric::MicroF1, 999, 1).is_err());
}

#[test]
fn bucket_scopes_partition_gold() {
    // Labels 0-1 frequent, 2-3 few-shot, 4 zero-shot.
    let buckets = [Bucket::Frequent, Bucket::Frequent, Bucket::FewShot, Bucket::FewShot, Bucket::ZeroShot];
    let gold = vec![vec![0, 4], vec![2], vec![1, 3]];
    let preds = predictions(vec![vec![4, 0, 1, 2, 3], vec![0, 1, 2, 3, 4], vec![3, 1, 0, 2, 4]]);
    let restricted = bucketed_report(&preds, &gold, Some(&buckets), &[1], RankingScope::Restricted, 0.5).unwrap();
    let global = bucketed_report(&preds, &gold, Some(&buckets), &[1], RankingScope::Global, 0.5).unwrap();
    let rp = |r: &xmtc_core::metrics::EvalReport, s| r.scope(s).unwrap().at(1).map(|a| a.rp);
    assert_eq!(restricted.scope(Scope::ZeroShot).unwrap().documents, 1);
    assert_eq!(rp(&restricted, Scope::ZeroShot), Some(1.0));
    assert_eq!(rp(&global, Scope::ZeroShot), Some(1.0));
    // Document 1's only gold label is few-shot: ranked third overall, first
    // among few-shot labels.
    assert_eq!(rp(&restricted, Scope::FewShot), Some(1.0));
    assert_eq!(rp(&global, Scope::FewShot), Some(0.5));
    assert_eq!(rp(&restricted, Scope::All), rp(&global, Scope::All));
}
