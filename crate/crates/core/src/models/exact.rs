use serde::{Deserialize, Serialize};

use crate::data::{tokenize, LabelCatalog};

/// Predicts every label whose descriptor tokens occur contiguously in the
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMatch {
    pub descriptors: Vec<Vec<String>>,
}

/// True when `needle` occurs as a contiguous run of `haystack`.
pub fn contains_run<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    !needle.is_empty() && needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

impl ExactMatch {
    pub fn from_catalog(catalog: &LabelCatalog) -> Self {
        Self {
            descriptors: catalog.labels().iter().map(|l| tokenize(&l.descriptor)).collect(),
        }
    }

    /// Label indices matched in `tokens`, ascending.
    pub fn matches(&self, tokens: &[String]) -> Vec<usize> {
        self.descriptors
            .iter()
            .enumerate()
            .filter(|(_, d)| contains_run(tokens, d))
            .map(|(i, _)| i)
            .collect()
    }

    /// 1.0 for matched labels, 0.0 otherwise.
    pub fn scores(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.descriptors.len()];
        for i in self.matches(tokens) {
            out[i] = 1.0;
        }
        out
    }
}
