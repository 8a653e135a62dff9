//! Offline prediction and gold files.
//!
//! Predictions:
//!
//! ```json
//! {"label_ids": ["100", "101"],
//!  "predictions": [{"doc_id": "d1", "scores": [0.9, 0.1]},
//!                  {"doc_id": "d2", "ranked": ["101"]}]}
//! ```
//!
//! `scores` rows follow `label_ids`. A `ranked` list is a best-first ranking;
//! every listed label counts as predicted positive. A bare array of entries
//! is also accepted.
//!
//! Gold: an object mapping document ids to label id lists, or an array of
//! `{"doc_id", "concepts"}` objects.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{rank, Predictions};
use crate::error::{DataError, Error, Result};
use crate::models::ScoreMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_ids: Option<Vec<String>>,
    pub predictions: Vec<PredictionEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GoldFile {
    pub docs: BTreeMap<String, Vec<String>>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        DataError::MalformedJson {
            path: path.to_owned(),
            message: e.to_string(),
        }
        .into()
    })
}

fn malformed(path: &Path, message: impl Into<String>) -> Error {
    DataError::MalformedJson {
        path: path.to_owned(),
        message: message.into(),
    }
    .into()
}

pub fn read_predictions(path: &Path) -> Result<PredictionsFile> {
    let v = read_json(path)?;
    let file: PredictionsFile = match v {
        Value::Array(_) => PredictionsFile {
            label_ids: None,
            predictions: serde_json::from_value(v).map_err(|e| malformed(path, e.to_string()))?,
        },
        _ => serde_json::from_value(v).map_err(|e| malformed(path, e.to_string()))?,
    };
    for p in &file.predictions {
        if p.scores.is_some() == p.ranked.is_some() {
            return Err(malformed(
                path,
                format!("document {}: give exactly one of `scores` and `ranked`", p.doc_id),
            ));
        }
        if p.scores.is_some() && file.label_ids.is_none() {
            return Err(malformed(path, "`scores` rows require `label_ids`"));
        }
    }
    Ok(file)
}

fn string_ids(path: &Path, v: &Value) -> Result<Vec<String>> {
    v.as_array()
        .ok_or_else(|| malformed(path, "label lists must be arrays"))?
        .iter()
        .map(|x| match x {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(malformed(path, "label ids must be strings")),
        })
        .collect()
}

pub fn read_gold(path: &Path) -> Result<GoldFile> {
    let v = read_json(path)?;
    let mut docs = BTreeMap::new();
    match &v {
        Value::Object(map) => {
            for (id, labels) in map {
                docs.insert(id.clone(), string_ids(path, labels)?);
            }
        }
        Value::Array(items) => {
            for item in items {
                let id = item["doc_id"]
                    .as_str()
                    .or_else(|| item["celex_id"].as_str())
                    .ok_or_else(|| malformed(path, "gold entries need `doc_id`"))?;
                let labels = item.get("concepts").or_else(|| item.get("labels"));
                let labels = labels.ok_or_else(|| malformed(path, format!("document {id}: no `concepts`")))?;
                if docs.insert(id.to_owned(), string_ids(path, labels)?).is_some() {
                    return Err(DataError::DuplicateDocument(id.to_owned()).into());
                }
            }
        }
        _ => return Err(malformed(path, "expected an object or an array")),
    }
    Ok(GoldFile { docs })
}

impl PredictionsFile {
    pub fn from_scores(scores: &ScoreMatrix) -> Self {
        Self {
            label_ids: Some(scores.label_ids.clone()),
            predictions: scores
                .doc_ids
                .iter()
                .zip(&scores.scores)
                .map(|(d, s)| PredictionEntry {
                    doc_id: d.clone(),
                    scores: Some(s.clone()),
                    ranked: None,
                })
                .collect(),
        }
    }

    /// Every label id mentioned, in first-seen order.
    pub fn mentioned_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.label_ids.clone().unwrap_or_default();
        for p in &self.predictions {
            for l in p.ranked.iter().flatten() {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
        }
        out
    }

    /// Maps both files onto `label_ids` and orders documents as in the gold
    /// file. Every gold document needs a prediction and vice versa.
    pub fn resolve(&self, gold: &GoldFile, label_ids: &[String], threshold: f64) -> Result<(Predictions, Vec<Vec<usize>>)> {
        let index: HashMap<&str, usize> = label_ids.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let lookup = |l: &str| index.get(l).copied().ok_or_else(|| Error::from(DataError::UnknownLabel(l.into())));
        let column_map: Option<Vec<usize>> = match &self.label_ids {
            Some(ids) => Some(ids.iter().map(|l| lookup(l)).collect::<Result<_>>()?),
            None => None,
        };
        let by_doc: HashMap<&str, &PredictionEntry> =
            self.predictions.iter().map(|p| (p.doc_id.as_str(), p)).collect();
        if by_doc.len() != self.predictions.len() {
            return Err(DataError::Invalid("duplicate document in predictions".into()).into());
        }
        if let Some(p) = self.predictions.iter().find(|p| !gold.docs.contains_key(&p.doc_id)) {
            return Err(DataError::UnknownDocument(p.doc_id.clone()).into());
        }
        let mut out = Predictions {
            doc_ids: Vec::new(),
            rankings: Vec::new(),
            positives: Vec::new(),
        };
        let mut gold_idx = Vec::new();
        for (doc, labels) in &gold.docs {
            let p = by_doc
                .get(doc.as_str())
                .ok_or_else(|| DataError::Invalid(format!("no prediction for document {doc}")))?;
            let mut g: Vec<usize> = labels.iter().map(|l| lookup(l)).collect::<Result<_>>()?;
            g.sort_unstable();
            g.dedup();
            let (ranking, mut positives) = match (&p.scores, &p.ranked) {
                (Some(s), _) => {
                    let cols = column_map.as_ref().expect("checked when reading");
                    if s.len() != cols.len() {
                        return Err(DataError::Invalid(format!("document {doc}: score row length")).into());
                    }
                    if s.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!("document {doc}: non-finite score")));
                    }
                    let mut full = vec![f64::NEG_INFINITY; label_ids.len()];
                    for (c, &v) in cols.iter().zip(s) {
                        full[*c] = v;
                    }
                    let ranking: Vec<usize> = rank(&full).into_iter().filter(|&l| full[l].is_finite()).collect();
                    let pos: Vec<usize> = (0..full.len()).filter(|&l| full[l] >= threshold).collect();
                    (ranking, pos)
                }
                (None, Some(r)) => {
                    let ranking: Vec<usize> = r.iter().map(|l| lookup(l)).collect::<Result<_>>()?;
                    let mut seen = ranking.clone();
                    seen.sort_unstable();
                    seen.dedup();
                    if seen.len() != ranking.len() {
                        return Err(DataError::Invalid(format!("document {doc}: duplicate ranked label")).into());
                    }
                    (ranking, seen)
                }
                (None, None) => unreachable!("checked when reading"),
            };
            positives.sort_unstable();
            out.doc_ids.push(doc.clone());
            out.rankings.push(ranking);
            out.positives.push(positives);
            gold_idx.push(g);
        }
        Ok((out, gold_idx))
    }
}
