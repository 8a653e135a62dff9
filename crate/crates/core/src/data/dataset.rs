use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::catalog::{Bucket, LabelCatalog};
use super::embeddings::{Coverage, EmbeddingMatrix, UNK_ID};
use super::raw::{load_corpus, load_descriptors, load_split, RawCorpus, RawDocument, Split};
use super::tokenize::{tokenize, whitespace_words};
use crate::error::{DataError, Error, Result};
use crate::io::Container;

/// A document as ordered sections of embedding ids plus its gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    /// Header, recitals, each article, attachments; empty sections dropped.
    pub sections: Vec<Vec<usize>>,
    /// Sorted label indices.
    pub labels: Vec<usize>,
}

impl TokenizedDocument {
    pub fn from_raw(raw: &RawDocument, embeddings: &EmbeddingMatrix, catalog: &LabelCatalog) -> Result<Self> {
        let sections: Vec<Vec<usize>> = raw
            .sections()
            .map(|text| tokenize(text).iter().map(|t| embeddings.index_of(t)).collect::<Vec<_>>())
            .filter(|s: &Vec<usize>| !s.is_empty())
            .collect();
        if !sections.iter().flatten().any(|&id| id != UNK_ID) {
            return Err(DataError::NoInVocabularyTokens(raw.doc_id.clone()).into());
        }
        Ok(Self {
            doc_id: raw.doc_id.clone(),
            sections,
            labels: catalog.indices(&raw.concepts)?,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.sections.iter().map(Vec::len).sum()
    }

    /// All sections concatenated, truncated to `max_tokens`.
    pub fn flat(&self, max_tokens: usize) -> Vec<usize> {
        self.sections.iter().flatten().copied().take(max_tokens).collect()
    }

    /// At most `max_sections` sections, each truncated to `max_tokens`.
    pub fn sectioned(&self, max_sections: usize, max_tokens: usize) -> Vec<Vec<usize>> {
        self.sections
            .iter()
            .take(max_sections)
            .map(|s| s[..s.len().min(max_tokens)].to_vec())
            .filter(|s| !s.is_empty())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub documents: usize,
    /// Mean whitespace-separated words per document, before tokenization.
    pub mean_whitespace_words: f64,
    /// Mean tokens per document after tokenization.
    pub mean_tokens: f64,
    pub mean_labels: f64,
    pub mean_sections: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub splits: BTreeMap<Split, SplitStats>,
    pub labels: usize,
    pub buckets: BTreeMap<Bucket, usize>,
    pub unseen_descriptors: usize,
    pub vocabulary: usize,
    pub coverage: Coverage,
    pub coverage_ratio: f64,
}

/// A tokenized corpus ready for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub catalog: LabelCatalog,
    pub train: Vec<TokenizedDocument>,
    pub dev: Vec<TokenizedDocument>,
    pub test: Vec<TokenizedDocument>,
    pub vocab_hash: String,
    pub report: IngestReport,
    /// Raw corpus location, needed by text baselines.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[TokenizedDocument] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn find(&self, doc_id: &str) -> Option<(Split, &TokenizedDocument)> {
        Split::ALL.into_iter().find_map(|s| {
            self.split(s)
                .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
                .ok()
                .map(|i| (s, &self.split(s)[i]))
        })
    }

    /// String tokens of every document in `split`, aligned with
    /// [`Dataset::split`]. Re-reads the corpus directory recorded at ingest.
    pub fn texts(&self, split: Split) -> Result<Vec<Vec<String>>> {
        let dir = self
            .corpus_dir
            .as_ref()
            .ok_or_else(|| Error::Config("dataset has no corpus directory to read text from".into()))?;
        document_texts(&load_split(&dir.join(split.name()))?, self.split(split))
    }

    /// Builds the catalog, restricts the embeddings to corpus and descriptor
    /// tokens, and tokenizes every document.
    pub fn build(
        raw: &RawCorpus,
        descriptors: &BTreeMap<String, String>,
        embeddings: &EmbeddingMatrix,
    ) -> Result<(Self, EmbeddingMatrix)> {
        let mut catalog = LabelCatalog::build(&raw.train, &raw.dev, &raw.test, descriptors)?;

        let mut corpus_tokens: HashSet<String> = HashSet::new();
        for split in Split::ALL {
            for d in raw.split(split) {
                for s in d.sections() {
                    corpus_tokens.extend(tokenize(s));
                }
            }
        }
        for l in catalog.labels().iter().chain(catalog.unseen()) {
            corpus_tokens.extend(l.descriptor_tokens.iter().cloned());
        }
        let embeddings = embeddings.restrict(|t| corpus_tokens.contains(t));
        catalog.assign_token_ids(&embeddings);

        let mut report = IngestReport {
            labels: catalog.len(),
            buckets: catalog.bucket_counts(),
            unseen_descriptors: catalog.unseen().len(),
            vocabulary: embeddings.len(),
            ..Default::default()
        };
        let mut splits: Vec<Vec<TokenizedDocument>> = Vec::new();
        for split in Split::ALL {
            let docs = raw.split(split);
            let tokenized: Vec<TokenizedDocument> = docs
                .par_iter()
                .map(|d| TokenizedDocument::from_raw(d, &embeddings, &catalog))
                .collect::<Result<_>>()?;
            let n = docs.len().max(1) as f64;
            let ws: usize = docs.iter().flat_map(|d| d.sections()).map(whitespace_words).sum();
            for d in docs {
                for s in d.sections() {
                    let toks = tokenize(s);
                    let c = embeddings.coverage(toks.iter().map(String::as_str));
                    report.coverage.tokens += c.tokens;
                    report.coverage.in_vocabulary += c.in_vocabulary;
                }
            }
            report.splits.insert(
                split,
                SplitStats {
                    documents: docs.len(),
                    mean_whitespace_words: ws as f64 / n,
                    mean_tokens: tokenized.iter().map(|d| d.num_tokens()).sum::<usize>() as f64 / n,
                    mean_labels: tokenized.iter().map(|d| d.labels.len()).sum::<usize>() as f64 / n,
                    mean_sections: tokenized.iter().map(|d| d.sections.len()).sum::<usize>() as f64 / n,
                },
            );
            splits.push(tokenized);
        }
        report.coverage_ratio = report.coverage.ratio();
        let test = splits.pop().unwrap_or_default();
        let dev = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        Ok((
            Self {
                catalog,
                train,
                dev,
                test,
                vocab_hash: embeddings.vocab_hash(),
                report,
                corpus_dir: None,
            },
            embeddings,
        ))
    }

    pub fn save(&self, dir: &Path, embeddings: &EmbeddingMatrix) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DATASET_FILE);
        let text = serde_json::to_string(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let mut c = Container::new(json!({
            "kind": "embeddings",
            "dim": embeddings.dim(),
            "tokens": embeddings.tokens(),
        }));
        c.push("vectors", embeddings.to_tensor());
        c.write(&dir.join(EMBEDDINGS_FILE))
    }

    pub fn load(dir: &Path) -> Result<(Self, EmbeddingMatrix)> {
        let path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut ds: Dataset = serde_json::from_str(&text)?;
        ds.catalog.reindex();
        let emb = load_cached_embeddings(&dir.join(EMBEDDINGS_FILE))?;
        if emb.vocab_hash() != ds.vocab_hash {
            return Err(DataError::Invalid("cached embeddings do not match dataset vocabulary".into()).into());
        }
        Ok((ds, emb))
    }
}

/// Tokens of each raw document with the same id as `docs[i]`, sections
/// concatenated.
pub fn document_texts(raw: &[RawDocument], docs: &[TokenizedDocument]) -> Result<Vec<Vec<String>>> {
    let by_id: BTreeMap<&str, &RawDocument> = raw.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    docs.iter()
        .map(|d| {
            let r = by_id
                .get(d.doc_id.as_str())
                .ok_or_else(|| DataError::UnknownDocument(d.doc_id.clone()))?;
            Ok(r.sections().flat_map(tokenize).collect())
        })
        .collect()
}

pub const DATASET_FILE: &str = "dataset.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";

fn load_cached_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let mut c = Container::read(path)?;
    let dim = c.manifest["dim"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("embeddings manifest has no dim".into()))? as usize;
    let tokens: Vec<String> = serde_json::from_value(c.manifest["tokens"].clone())?;
    let vectors = c
        .take("vectors")
        .ok_or_else(|| Error::Checkpoint("embeddings container has no vectors".into()))?;
    EmbeddingMatrix::from_parts(tokens, dim, vectors.into_data())
}

/// Reads a corpus directory, descriptor file and embedding file and tokenizes
/// everything.
pub fn ingest(
    corpus_dir: &Path,
    descriptors: &Path,
    embeddings: &Path,
    dim: Option<usize>,
) -> Result<(Dataset, EmbeddingMatrix)> {
    let raw = load_corpus(corpus_dir)?;
    let desc = load_descriptors(descriptors)?;
    let emb = EmbeddingMatrix::load(embeddings, dim)?;
    let (mut ds, emb) = Dataset::build(&raw, &desc, &emb)?;
    ds.corpus_dir = Some(corpus_dir.to_owned());
    Ok((ds, emb))
}
