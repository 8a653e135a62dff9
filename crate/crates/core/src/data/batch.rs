use crate::error::{Error, Result};

/// Right-padded token sequences with a mask marking real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }
}

pub fn pad(sequences: &[Vec<usize>], pad_id: usize) -> PaddedBatch {
    let width = sequences.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = PaddedBatch {
        ids: Vec::with_capacity(sequences.len()),
        mask: Vec::with_capacity(sequences.len()),
        lengths: Vec::with_capacity(sequences.len()),
    };
    for s in sequences {
        let mut ids = s.clone();
        ids.resize(width, pad_id);
        let mut mask = vec![true; s.len()];
        mask.resize(width, false);
        out.ids.push(ids);
        out.mask.push(mask);
        out.lengths.push(s.len());
    }
    out
}

/// Splits the sequences into consecutive padded batches of `batch_size`.
pub fn batch(sequences: &[Vec<usize>], batch_size: usize, pad_id: usize) -> Result<Vec<PaddedBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(sequences.chunks(batch_size).map(|c| pad(c, pad_id)).collect())
}
