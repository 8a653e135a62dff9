//! The method zoo: two text baselines, eight attention networks and the
//! bucket-selecting ensemble, behind one [`Classifier`] type with checkpoint
//! support.

mod config;
mod exact;
mod logreg;
mod neural;

pub use config::{Architecture, ModelConfig, BATCH_SIZES, DROPOUTS, ENC_LAYERS, ENC_UNITS, WORD_DROPOUTS};
pub use exact::{contains_run, ExactMatch};
pub use logreg::{LogReg, LogRegOptions, SparseRow, TfIdf};
pub use neural::{label_vectors, AttentionTrace, NeuralModel, Prepared, EMBEDDINGS_PARAM, LABEL_VECTORS_PARAM};

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Bucket, TokenizedDocument};
use crate::error::{DataError, Error, Result};
use crate::io::Container;
use crate::tensor::Tensor;

/// Per-document label scores. Rows follow `doc_ids`, columns the label index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub doc_ids: Vec<String>,
    pub label_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(doc_ids: Vec<String>, label_ids: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if doc_ids.len() != scores.len() {
            return Err(DataError::Invalid(format!(
                "{} document ids for {} score rows",
                doc_ids.len(),
                scores.len()
            ))
            .into());
        }
        for (d, row) in doc_ids.iter().zip(&scores) {
            if row.len() != label_ids.len() {
                return Err(DataError::Invalid(format!(
                    "document {d}: {} scores for {} labels",
                    row.len(),
                    label_ids.len()
                ))
                .into());
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Numeric(format!("document {d}: score {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            doc_ids,
            label_ids,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Selects `p_freq` for frequent and few-shot labels and `p_zero` for
/// zero-shot labels.
pub fn ensemble_lwan(p_freq: &[f64], p_zero: &[f64], buckets: &[Bucket]) -> Result<Vec<f64>> {
    if p_freq.len() != p_zero.len() || p_freq.len() != buckets.len() {
        return Err(DataError::Invalid(format!(
            "ensemble inputs disagree: {} / {} scores, {} buckets",
            p_freq.len(),
            p_zero.len(),
            buckets.len()
        ))
        .into());
    }
    buckets
        .iter()
        .enumerate()
        .map(|(l, b)| match b {
            Bucket::Frequent | Bucket::FewShot => Ok(p_freq[l]),
            Bucket::ZeroShot => Ok(p_zero[l]),
            Bucket::Unseen => Err(DataError::Invalid(format!("label {l} has no active bucket")).into()),
        })
        .collect()
}

/// BIGRU-LWAN for labels seen in training, Z-BIGRU-LWAN for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub frequent: NeuralModel,
    pub zero_shot: NeuralModel,
    pub buckets: Vec<Bucket>,
}

impl Ensemble {
    pub fn predict(&self, doc: &TokenizedDocument) -> Result<Vec<f64>> {
        ensemble_lwan(&self.frequent.predict(doc)?, &self.zero_shot.predict(doc)?, &self.buckets)
    }
}

/// Documents to score. Text baselines need the string tokens in `texts`,
/// aligned with `docs`.
#[derive(Debug, Clone, Copy)]
pub struct Documents<'a> {
    pub docs: &'a [TokenizedDocument],
    pub texts: Option<&'a [Vec<String>]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    ExactMatch(ExactMatch),
    Logreg(LogReg),
    Neural(NeuralModel),
    Ensemble(Ensemble),
}

/// Checkpoint metadata stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub label_ids: Vec<String>,
    pub buckets: Vec<Bucket>,
    pub vocab_hash: String,
    /// Free-form training bookkeeping (epoch, best score, ...).
    #[serde(default)]
    pub train_state: Value,
}

pub const CHECKPOINT_KIND: &str = "xmtc-checkpoint";
const PARAM_PREFIX: &str = "param.";

fn push_params(c: &mut Container, prefix: &str, m: &NeuralModel) {
    for (_, p) in m.store.iter() {
        c.push(format!("{prefix}{PARAM_PREFIX}{}", p.name), p.value.clone());
    }
}

fn take_neural(c: &mut Container, prefix: &str, config: &ModelConfig, num_labels: usize) -> Result<NeuralModel> {
    let key = |name: &str| format!("{prefix}{PARAM_PREFIX}{name}");
    let emb = c
        .take(&key(EMBEDDINGS_PARAM))
        .ok_or_else(|| Error::Checkpoint(format!("missing {}", key(EMBEDDINGS_PARAM))))?;
    let u = if config.architecture.is_zero_shot() {
        let u = c
            .get(&key(LABEL_VECTORS_PARAM))
            .ok_or_else(|| Error::Checkpoint(format!("missing {}", key(LABEL_VECTORS_PARAM))))?;
        Some(u.clone())
    } else {
        None
    };
    let mut model = NeuralModel::build(config, num_labels, emb, u, 0)?;
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.get(id).name.clone();
        if name == EMBEDDINGS_PARAM {
            continue;
        }
        let t = c
            .take(&key(&name))
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", key(&name))))?;
        if t.shape() != model.store.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                t.shape(),
                model.store.value(id).shape()
            )));
        }
        model.store.get_mut(id).value = t;
    }
    let stray = format!("{prefix}{PARAM_PREFIX}");
    if let Some((name, _)) = c.arrays.iter().find(|(n, _)| n.starts_with(&stray)) {
        return Err(Error::Checkpoint(format!("unexpected parameter {name}")));
    }
    Ok(model)
}

impl Classifier {
    pub fn architecture(&self) -> Architecture {
        match self {
            Classifier::ExactMatch(_) => Architecture::ExactMatch,
            Classifier::Logreg(_) => Architecture::Logreg,
            Classifier::Neural(m) => m.architecture(),
            Classifier::Ensemble(_) => Architecture::EnsembleLwan,
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Classifier::Neural(m) => m.config.clone(),
            Classifier::Logreg(m) => ModelConfig {
                logreg_features: m.vectorizer.len(),
                ..ModelConfig::for_architecture(Architecture::Logreg)
            },
            other => ModelConfig::for_architecture(other.architecture()),
        }
    }

    pub fn needs_text(&self) -> bool {
        matches!(self, Classifier::ExactMatch(_) | Classifier::Logreg(_))
    }

    pub fn score(&self, docs: Documents<'_>, label_ids: &[String]) -> Result<ScoreMatrix> {
        use rayon::prelude::*;
        let texts = || -> Result<&[Vec<String>]> {
            let t = docs
                .texts
                .ok_or_else(|| Error::Config(format!("{} needs document text", self.architecture())))?;
            if t.len() != docs.docs.len() {
                return Err(DataError::Invalid("texts and documents differ in length".into()).into());
            }
            Ok(t)
        };
        let scores = match self {
            Classifier::ExactMatch(m) => texts()?.par_iter().map(|t| m.scores(t)).collect(),
            Classifier::Logreg(m) => m.predict_all(texts()?),
            Classifier::Neural(m) => m.predict_all(docs.docs)?,
            Classifier::Ensemble(e) => docs.docs.par_iter().map(|d| e.predict(d)).collect::<Result<_>>()?,
        };
        ScoreMatrix::new(
            docs.docs.iter().map(|d| d.doc_id.clone()).collect(),
            label_ids.to_vec(),
            scores,
        )
    }

    pub fn to_container(&self, meta: &CheckpointMeta) -> Result<Container> {
        let mut extra = json!({});
        let mut c = Container::new(Value::Null);
        match self {
            Classifier::ExactMatch(m) => extra = json!({ "descriptors": m.descriptors }),
            Classifier::Logreg(m) => {
                extra = json!({ "features": m.vectorizer.features, "l2": m.l2, "num_labels": m.num_labels });
                c.push("logreg.weights", m.weight_tensor());
                c.push("logreg.bias", Tensor::vector(m.bias.clone()));
                c.push("logreg.idf", Tensor::vector(m.vectorizer.idf.clone()));
            }
            Classifier::Neural(m) => push_params(&mut c, "", m),
            Classifier::Ensemble(e) => {
                extra = json!({ "frequent": e.frequent.config, "zero_shot": e.zero_shot.config });
                push_params(&mut c, "frequent.", &e.frequent);
                push_params(&mut c, "zero-shot.", &e.zero_shot);
            }
        }
        c.manifest = json!({
            "kind": CHECKPOINT_KIND,
            "version": 1,
            "architecture": self.architecture(),
            "config": self.config(),
            "label_ids": meta.label_ids,
            "buckets": meta.buckets,
            "vocab_hash": meta.vocab_hash,
            "train_state": meta.train_state,
            "model": extra,
        });
        Ok(c)
    }

    /// Rebuilds a classifier. Arrays that are not model parameters (for
    /// example optimizer state) are returned untouched.
    pub fn from_container(mut c: Container) -> Result<(Self, CheckpointMeta, Vec<(String, Tensor)>)> {
        let m = c.manifest.clone();
        if m["kind"] != CHECKPOINT_KIND {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let arch: Architecture = serde_json::from_value(m["architecture"].clone())?;
        let config: ModelConfig = serde_json::from_value(m["config"].clone())?;
        let meta = CheckpointMeta {
            label_ids: serde_json::from_value(m["label_ids"].clone())?,
            buckets: serde_json::from_value(m["buckets"].clone())?,
            vocab_hash: m["vocab_hash"].as_str().unwrap_or_default().to_owned(),
            train_state: m["train_state"].clone(),
        };
        let num_labels = meta.label_ids.len();
        let model = &m["model"];
        let classifier = match arch {
            Architecture::ExactMatch => Classifier::ExactMatch(ExactMatch {
                descriptors: serde_json::from_value(model["descriptors"].clone())?,
            }),
            Architecture::Logreg => {
                let features: Vec<String> = serde_json::from_value(model["features"].clone())?;
                let mut take = |n: &str| c.take(n).ok_or_else(|| Error::Checkpoint(format!("missing {n}")));
                let weights = take("logreg.weights")?.into_data();
                let bias = take("logreg.bias")?.into_data();
                let idf = take("logreg.idf")?.into_data();
                if idf.len() != features.len() || bias.len() != num_labels || weights.len() != num_labels * features.len() {
                    return Err(Error::Checkpoint("logistic regression arrays disagree in size".into()));
                }
                Classifier::Logreg(LogReg {
                    vectorizer: TfIdf::from_parts(features, idf),
                    weights,
                    bias,
                    num_labels,
                    l2: model["l2"].as_f64().unwrap_or(0.0),
                })
            }
            Architecture::EnsembleLwan => {
                let fc: ModelConfig = serde_json::from_value(model["frequent"].clone())?;
                let zc: ModelConfig = serde_json::from_value(model["zero_shot"].clone())?;
                Classifier::Ensemble(Ensemble {
                    frequent: take_neural(&mut c, "frequent.", &fc, num_labels)?,
                    zero_shot: take_neural(&mut c, "zero-shot.", &zc, num_labels)?,
                    buckets: meta.buckets.clone(),
                })
            }
            _ => {
                if config.architecture != arch {
                    return Err(Error::Checkpoint("architecture and config disagree".into()));
                }
                Classifier::Neural(take_neural(&mut c, "", &config, num_labels)?)
            }
        };
        Ok((classifier, meta, c.arrays))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta, extra_arrays: Vec<(String, Tensor)>) -> Result<()> {
        let mut c = self.to_container(meta)?;
        c.arrays.extend(extra_arrays);
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta, Vec<(String, Tensor)>)> {
        Self::from_container(Container::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    #[test]
    fn ensemble_selects_by_bucket() {
        let f = [0.1, 0.2, 0.3];
        let z = [0.7, 0.8, 0.9];
        assert_eq!(ensemble_lwan(&f, &z, &[Bucket::Frequent; 3]).unwrap(), f);
        assert_eq!(ensemble_lwan(&f, &z, &[Bucket::ZeroShot; 3]).unwrap(), z);
        let mixed = [Bucket::Frequent, Bucket::ZeroShot, Bucket::FewShot];
        assert_eq!(ensemble_lwan(&f, &z, &mixed).unwrap(), vec![0.1, 0.8, 0.3]);
        assert!(ensemble_lwan(&f, &z, &mixed[..2]).is_err());
        assert!(ensemble_lwan(&f, &z, &[Bucket::Frequent, Bucket::Unseen, Bucket::FewShot]).is_err());
    }

    #[test]
    fn score_matrix_rejects_out_of_range() {
        let ids = vec!["d".to_string()];
        let labels = vec!["1".to_string(), "2".to_string()];
        assert!(ScoreMatrix::new(ids.clone(), labels.clone(), vec![vec![0.5, 0.5]]).is_ok());
        assert!(ScoreMatrix::new(ids.clone(), labels.clone(), vec![vec![0.5, f64::NAN]]).is_err());
        assert!(ScoreMatrix::new(ids.clone(), labels.clone(), vec![vec![0.5]]).is_err());
        assert!(ScoreMatrix::new(ids, labels, vec![]).is_err());
    }

    #[test]
    fn baseline_checkpoints_round_trip() {
        let meta = CheckpointMeta {
            label_ids: vec!["1".into(), "2".into()],
            buckets: vec![Bucket::FewShot, Bucket::ZeroShot],
            vocab_hash: "abc".into(),
            train_state: json!({"epoch": 3}),
        };
        let em = Classifier::ExactMatch(ExactMatch {
            descriptors: vec![tokenize("health control"), tokenize("import")],
        });
        let corpus: Vec<Vec<String>> = ["x y", "y z"].iter().map(|t| tokenize(t)).collect();
        let lr = Classifier::Logreg(
            LogReg::fit(&corpus, &[vec![0], vec![1]], 2, 10, &LogRegOptions::default()).unwrap(),
        );
        for c in [em, lr] {
            let bytes = c.to_container(&meta).unwrap().to_bytes().unwrap();
            let (back, m, extra) = Classifier::from_container(Container::from_reader(&bytes[..]).unwrap()).unwrap();
            assert_eq!(m, meta);
            assert!(extra.is_empty());
            match (&c, &back) {
                (Classifier::Logreg(a), Classifier::Logreg(b)) => {
                    assert_eq!(a.weights, b.weights);
                    assert_eq!(a.predict(&corpus[0]), b.predict(&corpus[0]));
                }
                _ => assert_eq!(c, back),
            }
        }
    }
}
