use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::embeddings::{EmbeddingMatrix, UNK_ID};
use super::raw::RawDocument;
use super::tokenize::tokenize;
use crate::error::{DataError, Result};

/// Labels seen in more than this many training documents are frequent.
pub const FREQUENT_THRESHOLD: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bucket {
    Frequent,
    FewShot,
    ZeroShot,
    Unseen,
}

impl Bucket {
    pub fn from_train_count(count: usize) -> Self {
        match count {
            0 => Bucket::ZeroShot,
            c if c > FREQUENT_THRESHOLD => Bucket::Frequent,
            _ => Bucket::FewShot,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Frequent => "frequent",
            Bucket::FewShot => "few-shot",
            Bucket::ZeroShot => "zero-shot",
            Bucket::Unseen => "unseen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: String,
    pub descriptor: String,
    pub descriptor_tokens: Vec<String>,
    /// Embedding ids of the descriptor tokens; out-of-vocabulary tokens are
    /// left out.
    #[serde(default)]
    pub descriptor_ids: Vec<usize>,
    pub train_count: usize,
    pub bucket: Bucket,
}

/// The active label index: every concept that occurs in at least one split,
/// ordered by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCatalog {
    labels: Vec<LabelEntry>,
    /// Descriptors that occur in no split; kept for export, never indexed.
    #[serde(default)]
    unseen: Vec<LabelEntry>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Orders numeric ids numerically and puts other ids after them.
fn id_key(id: &str) -> (u8, u64, String) {
    match id.parse::<u64>() {
        Ok(n) => (0, n, String::new()),
        Err(_) => (1, 0, id.to_owned()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogExportEntry {
    pub id: String,
    pub descriptor: String,
    pub train_count: usize,
    pub bucket: Bucket,
}

impl LabelCatalog {
    pub fn build(
        train: &[RawDocument],
        dev: &[RawDocument],
        test: &[RawDocument],
        descriptors: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut train_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in train {
            let unique: BTreeSet<&str> = d.concepts.iter().map(String::as_str).collect();
            for c in unique {
                *train_counts.entry(c).or_default() += 1;
            }
        }
        let mut present: BTreeSet<&str> = train_counts.keys().copied().collect();
        for d in dev.iter().chain(test) {
            present.extend(d.concepts.iter().map(String::as_str));
        }
        let missing: Vec<String> = present
            .iter()
            .filter(|c| !descriptors.contains_key(**c))
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(DataError::MissingDescriptors(missing).into());
        }
        let entry = |id: &str, bucket: Bucket| {
            let descriptor = descriptors[id].clone();
            LabelEntry {
                id: id.to_owned(),
                descriptor_tokens: tokenize(&descriptor),
                descriptor,
                descriptor_ids: Vec::new(),
                train_count: train_counts.get(id).copied().unwrap_or(0),
                bucket,
            }
        };
        let mut labels: Vec<LabelEntry> = present
            .iter()
            .map(|id| entry(id, Bucket::from_train_count(train_counts.get(id).copied().unwrap_or(0))))
            .collect();
        labels.sort_by_key(|l| id_key(&l.id));
        let mut unseen: Vec<LabelEntry> = descriptors
            .keys()
            .filter(|id| !present.contains(id.as_str()))
            .map(|id| entry(id, Bucket::Unseen))
            .collect();
        unseen.sort_by_key(|l| id_key(&l.id));
        Ok(Self::from_entries(labels, unseen))
    }

    pub fn from_entries(labels: Vec<LabelEntry>, unseen: Vec<LabelEntry>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
        Self { labels, unseen, index }
    }

    /// Restores the id index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.labels.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
    }

    pub fn assign_token_ids(&mut self, embeddings: &EmbeddingMatrix) {
        for l in self.labels.iter_mut().chain(self.unseen.iter_mut()) {
            l.descriptor_ids = l
                .descriptor_tokens
                .iter()
                .map(|t| embeddings.index_of(t))
                .filter(|&id| id != UNK_ID)
                .collect();
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[LabelEntry] {
        &self.labels
    }

    pub fn unseen(&self) -> &[LabelEntry] {
        &self.unseen
    }

    pub fn get(&self, idx: usize) -> &LabelEntry {
        &self.labels[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.id.clone()).collect()
    }

    pub fn buckets(&self) -> Vec<Bucket> {
        self.labels.iter().map(|l| l.bucket).collect()
    }

    pub fn bucket_counts(&self) -> BTreeMap<Bucket, usize> {
        let mut out = BTreeMap::new();
        for l in &self.labels {
            *out.entry(l.bucket).or_default() += 1;
        }
        out
    }

    /// Label indices for a list of concept ids; unknown ids are an error.
    pub fn indices(&self, concepts: &[String]) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = concepts
            .iter()
            .map(|c| self.index_of(c).ok_or_else(|| DataError::UnknownLabel(c.clone()).into()))
            .collect::<Result<_>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn export(&self) -> Vec<CatalogExportEntry> {
        self.labels
            .iter()
            .chain(&self.unseen)
            .map(|l| CatalogExportEntry {
                id: l.id.clone(),
                descriptor: l.descriptor.clone(),
                train_count: l.train_count,
                bucket: l.bucket,
            })
            .collect()
    }
}
