//! tf-idf n-gram features with one-vs-rest logistic regression.
//!
//! `tf = count / document length` and `idf = ln(N / df)` over the training
//! documents. The feature vocabulary keeps the `M` most frequent n-grams
//! (n = 1..=5) by total corpus count, ties broken alphabetically.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_N: usize = 5;

fn ngrams(tokens: &[String]) -> impl Iterator<Item = String> + '_ {
    (1..=MAX_N).flat_map(move |n| tokens.windows(n).map(|w| w.join(" ")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdf {
    pub features: Vec<String>,
    pub idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Sparse row: `(feature, value)` sorted by feature.
pub type SparseRow = Vec<(usize, f64)>;

impl TfIdf {
    pub fn fit(docs: &[Vec<String>], max_features: usize) -> Self {
        let mut count: HashMap<String, (u64, u64)> = HashMap::new();
        for d in docs {
            let mut seen: HashMap<String, u64> = HashMap::new();
            for g in ngrams(d) {
                *seen.entry(g).or_default() += 1;
            }
            for (g, c) in seen {
                let e = count.entry(g).or_default();
                e.0 += c;
                e.1 += 1;
            }
        }
        let mut ranked: Vec<(String, (u64, u64))> = count.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_features);
        let n = docs.len().max(1) as f64;
        let idf = ranked.iter().map(|(_, (_, df))| (n / *df as f64).ln()).collect();
        let features = ranked.into_iter().map(|(g, _)| g).collect();
        Self::from_parts(features, idf)
    }

    pub fn from_parts(features: Vec<String>, idf: Vec<f64>) -> Self {
        let index = features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
        Self { features, idf, index }
    }

    pub fn reindex(&mut self) {
        self.index = self.features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn transform(&self, tokens: &[String]) -> SparseRow {
        if tokens.is_empty() {
            return Vec::new();
        }
        let mut counts: HashMap<usize, u64> = HashMap::new();
        for g in ngrams(tokens) {
            if let Some(&i) = self.index.get(&g) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let len = tokens.len() as f64;
        let mut row: SparseRow = counts
            .into_iter()
            .map(|(i, c)| (i, c as f64 / len * self.idf[i]))
            .collect();
        row.sort_by_key(|&(i, _)| i);
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            l2: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub vectorizer: TfIdf,
    /// `[L×M]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_labels: usize,
    pub l2: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LogReg {
    pub fn untrained(vectorizer: TfIdf, num_labels: usize) -> Self {
        let m = vectorizer.len();
        Self {
            vectorizer,
            weights: vec![0.0; num_labels * m],
            bias: vec![0.0; num_labels],
            num_labels,
            l2: 0.0,
        }
    }

    fn score_row(&self, row: &SparseRow) -> Vec<f64> {
        let m = self.vectorizer.len();
        (0..self.num_labels)
            .map(|l| {
                let w = &self.weights[l * m..(l + 1) * m];
                sigmoid(self.bias[l] + row.iter().map(|&(i, v)| w[i] * v).sum::<f64>())
            })
            .collect()
    }

    pub fn predict(&self, tokens: &[String]) -> Vec<f64> {
        self.score_row(&self.vectorizer.transform(tokens))
    }

    pub fn predict_all(&self, docs: &[Vec<String>]) -> Vec<Vec<f64>> {
        docs.par_iter().map(|d| self.predict(d)).collect()
    }

    /// Mini-batch Adam on the mean binary cross-entropy plus `l2 · ‖W‖²/2`.
    /// `targets[n]` lists the gold label indices of document `n`.
    pub fn fit(
        docs: &[Vec<String>],
        targets: &[Vec<usize>],
        num_labels: usize,
        max_features: usize,
        opts: &LogRegOptions,
    ) -> Result<Self> {
        if docs.len() != targets.len() {
            return Err(Error::Config("documents and targets differ in length".into()));
        }
        if opts.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let vectorizer = TfIdf::fit(docs, max_features);
        let rows: Vec<SparseRow> = docs.par_iter().map(|d| vectorizer.transform(d)).collect();
        let mut model = Self::untrained(vectorizer, num_labels);
        model.l2 = opts.l2;
        let m = model.vectorizer.len();
        let n_params = num_labels * m + num_labels;
        let (mut m1, mut m2) = (vec![0.0; n_params], vec![0.0; n_params]);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut step = 0i32;
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(opts.batch_size) {
                let mut grad = vec![0.0; n_params];
                let scale = 1.0 / (chunk.len() * num_labels) as f64;
                for &n in chunk {
                    let p = model.score_row(&rows[n]);
                    let mut y = vec![0.0; num_labels];
                    for &l in &targets[n] {
                        y[l] = 1.0;
                    }
                    for l in 0..num_labels {
                        let g = (p[l] - y[l]) * scale;
                        for &(i, v) in &rows[n] {
                            grad[l * m + i] += g * v;
                        }
                        grad[num_labels * m + l] += g;
                    }
                }
                for (g, w) in grad.iter_mut().zip(&model.weights) {
                    *g += opts.l2 * w;
                }
                step += 1;
                let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
                for k in 0..n_params {
                    m1[k] = b1 * m1[k] + (1.0 - b1) * grad[k];
                    m2[k] = b2 * m2[k] + (1.0 - b2) * grad[k] * grad[k];
                    let upd = opts.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                    if k < num_labels * m {
                        model.weights[k] -= upd;
                    } else {
                        model.bias[k - num_labels * m] -= upd;
                    }
                }
            }
        }
        if !model.weights.iter().chain(&model.bias).all(|v| v.is_finite()) {
            return Err(Error::Numeric("logistic regression diverged".into()));
        }
        Ok(model)
    }

    pub fn weight_tensor(&self) -> Tensor {
        Tensor::new(vec![self.num_labels, self.vectorizer.len()], self.weights.clone()).expect("shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    #[test]
    fn tf_idf_matches_hand_table() {
        let corpus = docs(&["a b a", "b c", "a", "c c d"]);
        let v = TfIdf::fit(&corpus, 1000);
        let get = |row: &SparseRow, g: &str| {
            let i = v.features.iter().position(|f| f == g).unwrap();
            row.iter().find(|&&(j, _)| j == i).map_or(0.0, |&(_, x)| x)
        };
        let ln = |x: f64| x.ln();
        let r0 = v.transform(&corpus[0]);
        // df(a) = 2, df(b) = 2, df("a b") = 1, N = 4
        assert!((get(&r0, "a") - 2.0 / 3.0 * ln(2.0)).abs() < 1e-15);
        assert!((get(&r0, "b") - 1.0 / 3.0 * ln(2.0)).abs() < 1e-15);
        assert!((get(&r0, "a b") - 1.0 / 3.0 * ln(4.0)).abs() < 1e-15);
        assert!((get(&r0, "a b a") - 1.0 / 3.0 * ln(4.0)).abs() < 1e-15);
        assert_eq!(get(&r0, "c"), 0.0);
        let r3 = v.transform(&corpus[3]);
        assert!((get(&r3, "c") - 2.0 / 3.0 * ln(2.0)).abs() < 1e-15);
        assert!((get(&r3, "d") - 1.0 / 3.0 * ln(4.0)).abs() < 1e-15);
    }

    #[test]
    fn feature_cap_keeps_most_frequent() {
        let corpus = docs(&["x x x y", "y z"]);
        let v = TfIdf::fit(&corpus, 2);
        assert_eq!(v.features, vec!["x".to_string(), "x x".to_string()]);
    }

    #[test]
    fn unknown_ngrams_score_the_bias() {
        let v = TfIdf::fit(&docs(&["alpha beta"]), 10);
        let mut m = LogReg::untrained(v, 2);
        m.bias = vec![0.0, 2.0];
        let p = m.predict(&tokenize("gamma delta"));
        assert_eq!(p[0], 0.5);
        assert!((p[1] - sigmoid(2.0)).abs() < 1e-15);
    }

    #[test]
    fn learns_keywords() {
        let corpus = docs(&["red apple", "green apple", "red car", "blue car", "red", "car wheel"]);
        let targets = vec![vec![0], vec![0], vec![1], vec![1], vec![], vec![1]];
        let opts = LogRegOptions {
            epochs: 200,
            l2: 0.0,
            ..LogRegOptions::default()
        };
        let m = LogReg::fit(&corpus, &targets, 2, 100, &opts).unwrap();
        let p = m.predict(&tokenize("shiny apple"));
        assert!(p[0] > 0.5 && p[1] < 0.5, "{p:?}");
        let p = m.predict(&tokenize("fast car"));
        assert!(p[1] > 0.5 && p[0] < 0.5, "{p:?}");
        assert_eq!(m, LogReg::fit(&corpus, &targets, 2, 100, &opts).unwrap());
    }
}
