use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, uniform, Linear};
use crate::tensor::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Scores `h_t · u`.
    RawScore,
    /// Scores `tanh(W h_t + b) · u`.
    TanhProjected,
}

fn real_length(tape: &Tape<'_>, h: Var, mask: Option<&[bool]>, op: &'static str) -> Result<usize> {
    let shape = tape.shape(h);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(TensorError::Empty(op));
    }
    if let Some(m) = mask {
        if m.len() != shape[0] {
            return Err(TensorError::Shape {
                op,
                left: shape.to_vec(),
                right: vec![m.len()],
            });
        }
    }
    Ok(mask.map_or(shape[0], |m| m.iter().filter(|&&k| k).count()))
}

/// Single-context attention pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionHead {
    pub mode: AttentionMode,
    pub scale_by_length: bool,
    pub context: ParamId,
    pub projection: Option<Linear>,
}

impl SelfAttentionHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        mode: AttentionMode,
        scale_by_length: bool,
    ) -> Self {
        let projection = (mode == AttentionMode::TanhProjected)
            .then(|| Linear::new(store, rng, &format!("{name}.projection"), input_dim, input_dim));
        let bound = (1.0 / input_dim as f64).sqrt();
        let context = store.add(format!("{name}.context"), uniform(rng, &[input_dim], bound), true);
        Self {
            mode,
            scale_by_length,
            context,
            projection,
        }
    }

    /// Returns `(weights [T], pooled [d])` for `h [T×d]`.
    pub fn attend(&self, tape: &mut Tape<'_>, h: Var, mask: Option<&[bool]>) -> Result<(Var, Var)> {
        let len = real_length(tape, h, mask, "attend")?;
        let keys = match &self.projection {
            Some(p) => {
                let v = p.forward(tape, h)?;
                tape.tanh(v)?
            }
            None => h,
        };
        let u = tape.param(self.context);
        let scores = tape.matmul(keys, u)?;
        let weights = tape.softmax(scores, mask)?;
        let pooled = tape.matmul(weights, h)?;
        let pooled = if self.scale_by_length {
            tape.scale(pooled, 1.0 / len as f64)?
        } else {
            pooled
        };
        Ok((weights, pooled))
    }
}

/// One attention head per label: `d_l = Σ_t a_lt h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelWiseAttention {
    pub num_labels: usize,
    pub contexts: ParamId,
}

impl LabelWiseAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input_dim: usize, num_labels: usize) -> Self {
        let bound = (1.0 / input_dim as f64).sqrt();
        let contexts = store.add(
            format!("{name}.contexts"),
            uniform(rng, &[num_labels, input_dim], bound),
            true,
        );
        Self { num_labels, contexts }
    }

    /// Returns `(weights [L×T], D [L×d])`.
    pub fn attend(&self, tape: &mut Tape<'_>, h: Var, mask: Option<&[bool]>) -> Result<(Var, Var)> {
        real_length(tape, h, mask, "attend_labelwise")?;
        let u = tape.param(self.contexts);
        let scores = tape.matmul_nt(u, h)?;
        let weights = tape.softmax_rows(scores, mask)?;
        let d = tape.matmul(weights, h)?;
        Ok((weights, d))
    }
}

/// Mean of a descriptor's word embeddings.
pub fn label_embed(descriptor_token_embeddings: &Tensor) -> Result<Tensor> {
    let t = descriptor_token_embeddings;
    if t.ndim() != 2 || t.rows() == 0 {
        return Err(TensorError::Empty("label_embed"));
    }
    let mut mean = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (m, v) in mean.iter_mut().zip(t.row(r)) {
            *m += v;
        }
    }
    let n = t.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(Tensor::vector(mean))
}

/// Label-wise attention whose label vectors come from descriptor embeddings
/// and stay frozen, so labels without training examples can still be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotAttention {
    pub projection: Linear,
    /// `[L×emb_dim]`, frozen.
    pub label_vectors: ParamId,
    /// `[emb_dim×d]`, present only when the encoder width differs from
    /// `emb_dim`; maps `d_l` into the label-vector space.
    pub output_projection: Option<ParamId>,
}

impl ZeroShotAttention {
    /// `label_vectors` is `[L×emb_dim]`, typically rows built with [`label_embed`].
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        label_vectors: Tensor,
    ) -> Result<Self> {
        if label_vectors.ndim() != 2 || label_vectors.cols() == 0 {
            return Err(TensorError::Shape {
                op: "zero_shot_attention",
                left: label_vectors.shape().to_vec(),
                right: vec![input_dim],
            });
        }
        let emb_dim = label_vectors.cols();
        let projection = Linear::new(store, rng, &format!("{name}.projection"), input_dim, emb_dim);
        let label_vectors = store.add(format!("{name}.label_vectors"), label_vectors, false);
        let output_projection = (input_dim != emb_dim)
            .then(|| store.add(format!("{name}.output_projection"), glorot(rng, emb_dim, input_dim), true));
        Ok(Self {
            projection,
            label_vectors,
            output_projection,
        })
    }

    /// Returns `(weights [L×T], D [L×d], probs [L])`.
    pub fn attend(&self, tape: &mut Tape<'_>, h: Var, mask: Option<&[bool]>) -> Result<(Var, Var, Var)> {
        let len = real_length(tape, h, mask, "attend_zeroshot")?;
        let u = tape.param(self.label_vectors);
        let v = self.projection.forward(tape, h)?;
        let v = tape.tanh(v)?;
        if tape.shape(v)[1] != tape.shape(u)[1] {
            return Err(TensorError::Shape {
                op: "attend_zeroshot",
                left: tape.shape(v).to_vec(),
                right: tape.shape(u).to_vec(),
            });
        }
        let scores = tape.matmul_nt(u, v)?;
        let weights = tape.softmax_rows(scores, mask)?;
        let d = tape.matmul(weights, h)?;
        let d = tape.scale(d, 1.0 / len as f64)?;
        let aligned = match self.output_projection {
            Some(w) => {
                let w = tape.param(w);
                tape.matmul_nt(d, w)?
            }
            None => d,
        };
        let logits = tape.rows_dot(u, aligned)?;
        let probs = tape.sigmoid(logits)?;
        Ok((weights, d, probs))
    }
}
