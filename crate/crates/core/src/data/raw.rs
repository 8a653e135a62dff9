use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{DataError, Error, Result};

/// A legislative document split into its four zones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub header: String,
    pub recitals: String,
    pub main_body: Vec<String>,
    pub attachments: String,
    pub concepts: Vec<String>,
}

impl RawDocument {
    /// Section texts in order: header, recitals, each article, attachments.
    pub fn sections(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.header.as_str())
            .chain(std::iter::once(self.recitals.as_str()))
            .chain(self.main_body.iter().map(String::as_str))
            .chain(std::iter::once(self.attachments.as_str()))
    }

    /// Parses one document. The EURLEX57K key `celex_id` is accepted as the
    /// document id; unknown fields are ignored.
    pub fn from_json(value: &Value, path: &Path) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| DataError::MalformedJson {
            path: path.to_owned(),
            message: "expected a JSON object".into(),
        })?;
        let doc_id = obj
            .get("doc_id")
            .or_else(|| obj.get("celex_id"))
            .and_then(Value::as_str)
            .ok_or_else(|| DataError::MissingField {
                doc_id: path.display().to_string(),
                field: "doc_id",
            })?
            .to_owned();
        let text = |field: &'static str| -> Result<String> {
            match obj.get(field) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Null) | None => Err(DataError::MissingField {
                    doc_id: doc_id.clone(),
                    field,
                }
                .into()),
                Some(_) => Err(DataError::MalformedJson {
                    path: path.to_owned(),
                    message: format!("field `{field}` must be a string"),
                }
                .into()),
            }
        };
        let strings = |field: &'static str| -> Result<Vec<String>> {
            let arr = obj
                .get(field)
                .and_then(Value::as_array)
                .ok_or_else(|| DataError::MissingField {
                    doc_id: doc_id.clone(),
                    field,
                })?;
            arr.iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(DataError::MalformedJson {
                        path: path.to_owned(),
                        message: format!("field `{field}` must hold strings"),
                    }
                    .into()),
                })
                .collect()
        };
        Ok(RawDocument {
            header: text("header")?,
            recitals: text("recitals")?,
            main_body: strings("main_body")?,
            attachments: text("attachments")?,
            concepts: strings("concepts")?,
            doc_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawCorpus {
    pub train: Vec<RawDocument>,
    pub dev: Vec<RawDocument>,
    pub test: Vec<RawDocument>,
}

impl RawCorpus {
    pub fn split(&self, split: Split) -> &[RawDocument] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Loads `<dir>/{train,dev,test}/*.json`. Documents in each split are sorted
/// by id. A missing or empty split directory yields an empty split.
pub fn load_corpus(dir: &Path) -> Result<RawCorpus> {
    let mut corpus = RawCorpus::default();
    for split in Split::ALL {
        let docs = load_split(&dir.join(split.name()))?;
        match split {
            Split::Train => corpus.train = docs,
            Split::Dev => corpus.dev = docs,
            Split::Test => corpus.test = docs,
        }
    }
    Ok(corpus)
}

pub fn load_split(dir: &Path) -> Result<Vec<RawDocument>> {
    let files = match fs::read_dir(dir) {
        Ok(entries) => {
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            files
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(dir, e)),
    };
    if files.is_empty() {
        log::warn!("{}: no documents found", dir.display());
        return Ok(Vec::new());
    }
    let mut docs: Vec<RawDocument> = files
        .par_iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| DataError::MalformedJson {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let doc = RawDocument::from_json(&value, path)?;
            if doc.concepts.is_empty() {
                return Err(DataError::NoConcepts(doc.doc_id).into());
            }
            Ok(doc)
        })
        .collect::<Result<_>>()?;
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut seen = HashSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(DataError::DuplicateDocument(d.doc_id.clone()).into());
        }
    }
    Ok(docs)
}

/// Reads a descriptor file: a JSON object mapping concept id to either a
/// description string or an object with a `label` (or `description`) field.
pub fn load_descriptors(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| DataError::MalformedJson {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DataError::MalformedJson {
        path: path.to_owned(),
        message: "descriptor file must be a JSON object".into(),
    })?;
    let mut out = BTreeMap::new();
    for (id, v) in obj {
        let desc = match v {
            Value::String(s) => s.clone(),
            Value::Object(o) => o
                .get("label")
                .or_else(|| o.get("description"))
                .and_then(Value::as_str)
                .ok_or_else(|| DataError::MalformedJson {
                    path: path.to_owned(),
                    message: format!("descriptor {id} has no label"),
                })?
                .to_owned(),
            _ => {
                return Err(DataError::MalformedJson {
                    path: path.to_owned(),
                    message: format!("descriptor {id} must be a string or object"),
                }
                .into())
            }
        };
        out.insert(id.clone(), desc);
    }
    Ok(out)
}
