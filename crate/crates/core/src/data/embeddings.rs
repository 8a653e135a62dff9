use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, Error, Result};
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_DIM: usize = 200;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub tokens: usize,
    pub in_vocabulary: usize,
}

impl Coverage {
    pub fn ratio(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.in_vocabulary as f64 / self.tokens as f64
        }
    }
}

/// Pre-trained word vectors plus a zero padding row and an unknown row holding
/// the mean of every loaded vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from `(token, vector)` pairs; special rows are added.
    pub fn from_pairs(dim: usize, pairs: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        let mut vectors = vec![0.0; 2 * dim];
        let mut index = HashMap::new();
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for (line, (tok, vec)) in pairs.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(DataError::EmbeddingDimension {
                    line: line + 1,
                    expected: dim,
                    found: vec.len(),
                }
                .into());
            }
            for (m, v) in mean.iter_mut().zip(&vec) {
                *m += v;
            }
            count += 1;
            if index.contains_key(&tok) || tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok);
            vectors.extend_from_slice(&vec);
        }
        if count > 0 {
            for (slot, m) in vectors[dim..2 * dim].iter_mut().zip(&mean) {
                *slot = m / count as f64;
            }
        }
        index.insert(PAD_TOKEN.to_owned(), PAD_ID);
        index.insert(UNK_TOKEN.to_owned(), UNK_ID);
        Ok(Self {
            tokens,
            index,
            dim,
            vectors,
        })
    }

    /// Parses the plain-text format: one token per line followed by `dim`
    /// whitespace-separated floats. With `dim = None` the width of the first
    /// line is used. A leading `count dim` header line is skipped.
    pub fn parse<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut width = dim;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| DataError::EmbeddingParse {
                line: line_no,
                message: e.to_string(),
            })?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
            let expected = *width.get_or_insert(values.len());
            if values.len() != expected {
                return Err(DataError::EmbeddingDimension {
                    line: line_no,
                    expected,
                    found: values.len(),
                }
                .into());
            }
            let vec = values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| DataError::EmbeddingParse {
                            line: line_no,
                            message: format!("invalid number `{v}`"),
                        })
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            pairs.push((token.to_owned(), vec));
        }
        Self::from_pairs(width.unwrap_or(dim.unwrap_or(DEFAULT_DIM)), pairs)
    }

    pub fn load(path: &Path, dim: Option<usize>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), dim)
    }

    /// Keeps only tokens accepted by `keep`; the unknown row is unchanged.
    pub fn restrict(&self, keep: impl Fn(&str) -> bool) -> Self {
        let mut out = Self {
            tokens: self.tokens[..2].to_vec(),
            index: HashMap::new(),
            dim: self.dim,
            vectors: self.vectors[..2 * self.dim].to_vec(),
        };
        for (i, tok) in self.tokens.iter().enumerate().skip(2) {
            if keep(tok) {
                out.index.insert(tok.clone(), out.tokens.len());
                out.tokens.push(tok.clone());
                out.vectors.extend_from_slice(self.row(i));
            }
        }
        out.index.insert(PAD_TOKEN.to_owned(), PAD_ID);
        out.index.insert(UNK_TOKEN.to_owned(), UNK_ID);
        out
    }

    /// Rebuilds a matrix from stored tokens and row-major vectors (special rows
    /// included).
    pub fn from_parts(tokens: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if tokens.len() < 2 || vectors.len() != tokens.len() * dim {
            return Err(Error::Checkpoint("embedding table does not match its vocabulary".into()));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self {
            tokens,
            index,
            dim,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vocabulary size including the two special rows.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the unknown id.
    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.tokens.len(), self.dim], self.vectors.clone()).expect("consistent table")
    }

    pub fn coverage<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Coverage {
        let mut c = Coverage::default();
        for t in tokens {
            c.tokens += 1;
            if self.index.contains_key(t) {
                c.in_vocabulary += 1;
            }
        }
        c
    }

    /// SHA-256 over the tokens in id order; checkpoints record it so a model is
    /// never paired with a different vocabulary.
    pub fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
