//! Array container used for checkpoints and cached embeddings.
//!
//! Layout:
//!
//! ```text
//! XMTC-CONTAINER 1\n
//! <manifest: one line of JSON>\n
//! <payload: every array's values as little-endian f64, in manifest order>
//! ```
//!
//! The manifest is an object with caller-defined keys plus `arrays`, a list of
//! `{"name", "shape", "offset"}` entries where `offset` counts bytes from the
//! start of the payload.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &str = "XMTC-CONTAINER 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(manifest: Value) -> Self {
        Self {
            manifest,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor> {
        let pos = self.arrays.iter().position(|(n, _)| n == name)?;
        Some(self.arrays.remove(pos).1)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = self.manifest.clone();
        let obj = manifest
            .as_object_mut()
            .ok_or_else(|| Error::Checkpoint("manifest must be a JSON object".into()))?;
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.arrays.len());
        for (name, t) in &self.arrays {
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 8 * t.numel() as u64;
        }
        obj.insert("arrays".into(), serde_json::to_value(entries)?);
        let header = serde_json::to_string(&manifest)?;
        let mut out = Vec::with_capacity(header.len() + offset as usize + 32);
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        let mut magic = String::new();
        r.read_line(&mut magic).map_err(|e| bad(&e.to_string()))?;
        if magic.trim_end() != MAGIC {
            return Err(bad("not an XMTC container"));
        }
        let mut header = String::new();
        r.read_line(&mut header).map_err(|e| bad(&e.to_string()))?;
        let mut manifest: Value = serde_json::from_str(header.trim_end())?;
        let entries: Vec<ArrayEntry> = serde_json::from_value(
            manifest
                .as_object_mut()
                .and_then(|o| o.remove("arrays"))
                .ok_or_else(|| bad("manifest has no arrays"))?,
        )?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| bad(&e.to_string()))?;
        let mut arrays = Vec::with_capacity(entries.len());
        for e in entries {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > payload.len() {
                return Err(bad(&format!("array {} is truncated", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self { manifest, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(values in proptest::collection::vec(-1e300f64..1e300, 0..40), cols in 1usize..5) {
            let rows = values.len() / cols;
            let data = values[..rows * cols].to_vec();
            let mut c = Container::new(json!({"kind": "test"}));
            c.push("m", Tensor::new(vec![rows, cols], data.clone()).unwrap());
            c.push("s", Tensor::scalar(-0.0));
            let back = Container::from_reader(&c.to_bytes().unwrap()[..]).unwrap();
            prop_assert_eq!(back.manifest["kind"].as_str(), Some("test"));
            let m = back.get("m").unwrap();
            prop_assert_eq!(m.shape(), &[rows, cols][..]);
            prop_assert!(m.data().iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.get("s").unwrap().item().to_bits(), (-0.0f64).to_bits());
        }
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Container::from_reader(&b"hello\n{}\n"[..]).is_err());
    }
}
