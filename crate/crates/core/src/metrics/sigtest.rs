use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ndcg_at_k, precision_at_k, r_precision_at_k, recall_at_k, Counts, Predictions};
use crate::error::{DataError, Error, Result};

pub const MIN_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    RPrecision(usize),
    Ndcg(usize),
    Precision(usize),
    Recall(usize),
    MicroF1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::RPrecision(k) => write!(f, "RP@{k}"),
            Metric::Ndcg(k) => write!(f, "nDCG@{k}"),
            Metric::Precision(k) => write!(f, "P@{k}"),
            Metric::Recall(k) => write!(f, "R@{k}"),
            Metric::MicroF1 => f.write_str("Micro-F1"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "micro-f1" || lower == "micro_f1" || lower == "f1" {
            return Ok(Metric::MicroF1);
        }
        let bad = || Error::Config(format!("unknown metric `{s}` (try RP@5, nDCG@5, P@5, R@5, Micro-F1)"));
        let (name, k) = lower.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match name {
            "rp" => Ok(Metric::RPrecision(k)),
            "ndcg" => Ok(Metric::Ndcg(k)),
            "p" => Ok(Metric::Precision(k)),
            "r" => Ok(Metric::Recall(k)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigTestResult {
    pub metric: Option<Metric>,
    pub score_a: f64,
    pub score_b: f64,
    pub observed_difference: f64,
    pub iterations: usize,
    pub seed: u64,
    pub at_least_as_extreme: usize,
    pub p_value: f64,
}

fn shuffle_test<S: Copy>(a: &[S], b: &[S], agg: impl Fn(&[S]) -> f64, iterations: usize, seed: u64) -> SigTestResult {
    let (sa, sb) = (agg(a), agg(b));
    let observed = (sa - sb).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    let mut count = 0;
    for _ in 0..iterations {
        for i in 0..a.len() {
            if rng.gen::<bool>() {
                x[i] = b[i];
                y[i] = a[i];
            } else {
                x[i] = a[i];
                y[i] = b[i];
            }
        }
        if (agg(&x) - agg(&y)).abs() >= observed - 1e-12 {
            count += 1;
        }
    }
    SigTestResult {
        metric: None,
        score_a: sa,
        score_b: sb,
        observed_difference: sa - sb,
        iterations,
        seed,
        at_least_as_extreme: count,
        p_value: (count + 1) as f64 / (iterations + 1) as f64,
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Two-tailed test on per-document values of a document-averaged metric.
pub fn randomization_test_values(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<SigTestResult> {
    if a.len() != b.len() {
        return Err(DataError::Invalid("systems were scored on different documents".into()).into());
    }
    if iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    Ok(shuffle_test(a, b, mean, iterations, seed))
}

/// Approximate randomization test between two systems on the same documents.
/// Each iteration swaps the systems' outputs per document with probability
/// 0.5; `p = (#{|Δ_perm| >= |Δ_obs|} + 1) / (iterations + 1)`.
pub fn randomization_test(
    a: &Predictions,
    b: &Predictions,
    gold: &[Vec<usize>],
    metric: Metric,
    iterations: usize,
    seed: u64,
) -> Result<SigTestResult> {
    if a.doc_ids != b.doc_ids || a.len() != gold.len() {
        return Err(DataError::Invalid("systems were scored on different documents".into()).into());
    }
    if iterations < MIN_ITERATIONS {
        return Err(Error::Config(format!("use at least {MIN_ITERATIONS} iterations")));
    }
    let mut result = if metric == Metric::MicroF1 {
        let per_doc = |p: &Predictions| -> Vec<Counts> {
            p.positives.iter().zip(gold).map(|(pos, g)| Counts::of(g, pos)).collect()
        };
        let f1 = |c: &[Counts]| c.iter().fold(Counts::default(), |acc, &x| acc.add(x)).f1();
        shuffle_test(&per_doc(a), &per_doc(b), f1, iterations, seed)
    } else {
        let value = |g: &[usize], r: &[usize]| match metric {
            Metric::RPrecision(k) => r_precision_at_k(g, r, k),
            Metric::Ndcg(k) => ndcg_at_k(g, r, k),
            Metric::Precision(k) => precision_at_k(g, r, k),
            Metric::Recall(k) => recall_at_k(g, r, k),
            Metric::MicroF1 => unreachable!(),
        };
        let mut va = Vec::new();
        let mut vb = Vec::new();
        for ((g, ra), rb) in gold.iter().zip(&a.rankings).zip(&b.rankings) {
            if let (Some(x), Some(y)) = (value(g, ra), value(g, rb)) {
                va.push(x);
                vb.push(y);
            }
        }
        shuffle_test(&va, &vb, mean, iterations, seed)
    };
    result.metric = Some(metric);
    Ok(result)
}
