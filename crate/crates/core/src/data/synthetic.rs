//! Planted-keyword corpora for tests and demos.
//!
//! Every label owns a couple of keywords. A document carrying a label contains
//! that label's keywords among random filler words, and the label descriptor
//! is the keyword list itself. Zero-shot labels never occur in training; their
//! descriptor reuses one keyword of a trained label plus a fresh keyword.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingMatrix;
use super::raw::{RawCorpus, RawDocument, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    pub labels: usize,
    pub zero_shot_labels: usize,
    pub vocabulary: usize,
    pub embedding_dim: usize,
    pub keywords_per_label: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    pub max_labels_per_doc: usize,
    /// Share of dev/test documents that carry a zero-shot label.
    pub zero_shot_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_docs: 50,
            dev_docs: 20,
            test_docs: 20,
            labels: 10,
            zero_shot_labels: 0,
            vocabulary: 200,
            embedding_dim: 16,
            keywords_per_label: 2,
            min_filler: 12,
            max_filler: 24,
            max_labels_per_doc: 3,
            zero_shot_share: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: RawCorpus,
    pub descriptors: BTreeMap<String, String>,
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub dim: usize,
    pub zero_shot_ids: Vec<String>,
}

/// Paths written by [`SyntheticCorpus::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub corpus_dir: PathBuf,
    pub descriptors: PathBuf,
    pub embeddings: PathBuf,
}

/// Standard normal draw via Box-Muller.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn word(i: usize) -> String {
    format!("w{i:04}")
}

pub fn label_id(i: usize) -> String {
    (100 + i).to_string()
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let c = config;
    let keywords = c.labels * c.keywords_per_label + c.zero_shot_labels;
    if c.labels == 0 || c.keywords_per_label == 0 || c.max_labels_per_doc == 0 {
        return Err(Error::Config("synthetic corpus needs labels and keywords".into()));
    }
    if c.vocabulary <= keywords || c.min_filler > c.max_filler {
        return Err(Error::Config(format!(
            "vocabulary {} too small for {keywords} keywords",
            c.vocabulary
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut ids: Vec<usize> = (0..c.vocabulary).collect();
    ids.shuffle(&mut rng);
    let (kw, filler) = ids.split_at(keywords);
    let label_words: Vec<Vec<String>> = (0..c.labels)
        .map(|l| {
            (0..c.keywords_per_label)
                .map(|k| word(kw[l * c.keywords_per_label + k]))
                .collect()
        })
        .collect();
    let zs_words: Vec<Vec<String>> = (0..c.zero_shot_labels)
        .map(|z| {
            let shared = label_words[z % c.labels][0].clone();
            vec![shared, word(kw[c.labels * c.keywords_per_label + z])]
        })
        .collect();
    let all_words: Vec<&Vec<String>> = label_words.iter().chain(&zs_words).collect();

    let mut descriptors = BTreeMap::new();
    for (i, words) in all_words.iter().enumerate() {
        descriptors.insert(label_id(i), words.join(" "));
    }
    let zero_shot_ids: Vec<String> = (c.labels..c.labels + c.zero_shot_labels).map(label_id).collect();

    let make_doc = |rng: &mut ChaCha8Rng, split: Split, n: usize, zero_shot: bool| -> RawDocument {
        let k = rng.gen_range(1..=c.max_labels_per_doc.min(c.labels));
        let mut labels: Vec<usize> = rand::seq::index::sample(rng, c.labels, k).into_vec();
        if zero_shot {
            labels.truncate(c.max_labels_per_doc - 1);
            labels.push(c.labels + rng.gen_range(0..c.zero_shot_labels));
        }
        labels.sort_unstable();
        let mut tokens: Vec<String> = (0..rng.gen_range(c.min_filler..=c.max_filler))
            .map(|_| word(filler[rng.gen_range(0..filler.len())]))
            .collect();
        for &l in &labels {
            for w in all_words[l].iter() {
                let pos = rng.gen_range(0..=tokens.len());
                tokens.insert(pos, w.clone());
            }
        }
        let sections = rng.gen_range(1..=3usize).min(tokens.len());
        let chunk = tokens.len().div_ceil(sections);
        let mut parts: Vec<String> = tokens.chunks(chunk).map(|s| s.join(" ")).collect();
        let header = parts.remove(0);
        RawDocument {
            doc_id: format!("{}-{n:05}", split.name()),
            header,
            recitals: String::new(),
            main_body: parts,
            attachments: String::new(),
            concepts: labels.into_iter().map(label_id).collect(),
        }
    };

    let mut corpus = RawCorpus::default();
    for n in 0..c.train_docs {
        let d = make_doc(&mut rng, Split::Train, n, false);
        corpus.train.push(d);
    }
    for (split, count) in [(Split::Dev, c.dev_docs), (Split::Test, c.test_docs)] {
        for n in 0..count {
            let zs = c.zero_shot_labels > 0 && rng.gen::<f64>() < c.zero_shot_share;
            let d = make_doc(&mut rng, split, n, zs);
            match split {
                Split::Dev => corpus.dev.push(d),
                _ => corpus.test.push(d),
            }
        }
    }

    let embeddings = (0..c.vocabulary)
        .map(|i| {
            let v: Vec<f64> = (0..c.embedding_dim).map(|_| normal(&mut rng)).collect();
            (word(i), v)
        })
        .collect();
    Ok(SyntheticCorpus {
        corpus,
        descriptors,
        embeddings,
        dim: c.embedding_dim,
        zero_shot_ids,
    })
}

impl SyntheticCorpus {
    pub fn embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::from_pairs(self.dim, self.embeddings.clone())
    }

    /// Writes `corpus/{train,dev,test}/*.json`, `descriptors.json` and
    /// `embeddings.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<SyntheticPaths> {
        let corpus_dir = dir.join("corpus");
        for split in Split::ALL {
            let sdir = corpus_dir.join(split.name());
            fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
            for d in self.corpus.split(split) {
                let p = sdir.join(format!("{}.json", d.doc_id));
                fs::write(&p, serde_json::to_vec_pretty(d)?).map_err(|e| Error::io(&p, e))?;
            }
        }
        let descriptors = dir.join("descriptors.json");
        fs::write(&descriptors, serde_json::to_vec_pretty(&self.descriptors)?)
            .map_err(|e| Error::io(&descriptors, e))?;
        let embeddings = dir.join("embeddings.txt");
        let mut text = String::new();
        for (w, v) in &self.embeddings {
            text.push_str(w);
            for x in v {
                text.push(' ');
                text.push_str(&x.to_string());
            }
            text.push('\n');
        }
        fs::write(&embeddings, text).map_err(|e| Error::io(&embeddings, e))?;
        Ok(SyntheticPaths {
            corpus_dir,
            descriptors,
            embeddings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ingest, Bucket};

    #[test]
    fn deterministic_and_planted() {
        let cfg = SyntheticConfig {
            zero_shot_labels: 4,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.corpus.train.len(), 50);
        assert_eq!(a.descriptors.len(), 14);
        for d in &a.corpus.train {
            let text: Vec<&str> = d.sections().flat_map(str::split_whitespace).collect();
            for l in &d.concepts {
                assert!(!a.zero_shot_ids.contains(l));
                for w in a.descriptors[l].split(' ') {
                    assert!(text.contains(&w));
                }
            }
        }
        let zs_docs = a
            .corpus
            .dev
            .iter()
            .chain(&a.corpus.test)
            .filter(|d| d.concepts.iter().any(|l| a.zero_shot_ids.contains(l)))
            .count();
        assert!(zs_docs > 0);
    }

    #[test]
    fn round_trips_through_ingest() {
        let cfg = SyntheticConfig {
            zero_shot_labels: 2,
            dev_docs: 30,
            ..SyntheticConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = s.write(dir.path()).unwrap();
        let (ds, emb) = ingest(&p.corpus_dir, &p.descriptors, &p.embeddings, None).unwrap();
        assert_eq!(emb.dim(), 16);
        assert_eq!(ds.train.len(), 50);
        let zs = ds.catalog.buckets().iter().filter(|&&b| b == Bucket::ZeroShot).count();
        assert!((1..=2).contains(&zs));
    }
}
