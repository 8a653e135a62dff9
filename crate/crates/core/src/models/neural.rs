use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Architecture, ModelConfig};
use crate::data::{EmbeddingMatrix, LabelCatalog, TokenizedDocument};
use crate::error::{DataError, Error, Result};
use crate::nn::{
    label_embed, maybe_dropout, uniform, Activation, AttentionMode, BiGruEncoder, CnnEncoder, Dropout,
    LabelWiseAttention, Linear, SelfAttentionHead, ZeroShotAttention,
};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const EMBEDDINGS_PARAM: &str = "embeddings";
pub const LABEL_VECTORS_PARAM: &str = "attention.label_vectors";

#[derive(Debug, Clone, PartialEq)]
enum Encoder {
    Bigru(BiGruEncoder),
    Cnn(CnnEncoder),
}

impl Encoder {
    fn output_dim(&self) -> usize {
        match self {
            Encoder::Bigru(e) => e.output_dim(),
            Encoder::Cnn(e) => e.output_dim(),
        }
    }

    fn encode(&self, tape: &mut Tape<'_>, x: Var, mask: Option<&[bool]>, mut dropout: Option<&mut Dropout>) -> Result<Var> {
        let h = match self {
            Encoder::Bigru(e) => e.encode(tape, x, mask, dropout.as_deref_mut())?,
            Encoder::Cnn(e) => e.encode(tape, x)?,
        };
        Ok(maybe_dropout(tape, h, dropout)?)
    }
}

/// One weight row and one bias per label: `p_l = σ(w_l · d_l + b_l)`.
#[derive(Debug, Clone, PartialEq)]
struct LabelDecoder {
    w: ParamId,
    b: ParamId,
}

impl LabelDecoder {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, labels: usize, dim: usize, tied: Option<ParamId>) -> Self {
        let w = tied.unwrap_or_else(|| {
            store.add(
                "decoder.weight",
                uniform(rng, &[labels, dim], (1.0 / dim as f64).sqrt()),
                true,
            )
        });
        let b = store.add("decoder.bias", Tensor::zeros(&[labels]), true);
        Self { w, b }
    }

    fn forward(&self, tape: &mut Tape<'_>, d: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let logits = tape.rows_dot(w, d)?;
        let logits = tape.add(logits, b)?;
        Ok(tape.sigmoid(logits)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    BigruAtt {
        enc: BiGruEncoder,
        att: SelfAttentionHead,
        dec: Linear,
    },
    Han {
        words: BiGruEncoder,
        word_att: SelfAttentionHead,
        sections: BiGruEncoder,
        section_att: SelfAttentionHead,
        dec: Linear,
    },
    MaxHss {
        words: BiGruEncoder,
        word_att: SelfAttentionHead,
        dec: Linear,
    },
    Lwan {
        enc: Encoder,
        lwa: LabelWiseAttention,
        dec: LabelDecoder,
    },
    ZeroShot {
        enc: Encoder,
        zs: ZeroShotAttention,
    },
    LwHan {
        words: BiGruEncoder,
        lwa: LabelWiseAttention,
        dec: LabelDecoder,
    },
}

/// Attention weights recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionTrace {
    /// `[T]` weights of a single head.
    Single(Var),
    /// `[L×T]`, one row per label.
    LabelWise(Var),
    /// Word weights per section plus `[S]` section weights.
    Hierarchical { words: Vec<Var>, sections: Var },
    /// Per-section label-wise weights `[L×T_s]`.
    SectionLabelWise(Vec<Var>),
    /// Per-section word weights, combined by max-pooling rather than attention.
    SectionWords(Vec<Var>),
}

/// Model input after truncation.
#[derive(Debug, Clone, PartialEq)]
pub enum Prepared {
    Flat(Vec<usize>),
    Sections(Vec<Vec<usize>>),
}

/// Any of the eight attention networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    embeddings: ParamId,
    body: Body,
    num_labels: usize,
}

/// Frozen label vectors `u_l`: the mean embedding of each descriptor's
/// in-vocabulary tokens.
pub fn label_vectors(catalog: &LabelCatalog, embeddings: &EmbeddingMatrix) -> Result<Tensor> {
    let dim = embeddings.dim();
    let mut data = Vec::with_capacity(catalog.len() * dim);
    for l in catalog.labels() {
        let rows: Vec<f64> = l
            .descriptor_ids
            .iter()
            .flat_map(|&id| embeddings.row(id).iter().copied())
            .collect();
        let t = Tensor::matrix(l.descriptor_ids.len(), dim, rows)?;
        let u = label_embed(&t).map_err(|_| DataError::DegenerateDescriptor(l.id.clone()))?;
        data.extend(u.into_data());
    }
    Ok(Tensor::matrix(catalog.len(), dim, data)?)
}

impl NeuralModel {
    pub fn new(config: &ModelConfig, catalog: &LabelCatalog, embeddings: &EmbeddingMatrix, seed: u64) -> Result<Self> {
        let u = if config.architecture.is_zero_shot() {
            Some(label_vectors(catalog, embeddings)?)
        } else {
            None
        };
        Self::build(config, catalog.len(), embeddings.to_tensor(), u, seed)
    }

    /// Creates the parameters. Initialization draws from a generator seeded
    /// with `seed` in a fixed order, so equal seeds give equal models.
    pub fn build(
        config: &ModelConfig,
        num_labels: usize,
        embeddings: Tensor,
        label_vectors: Option<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture;
        if !arch.is_neural() {
            return Err(Error::Config(format!("{arch} is not a single neural network")));
        }
        if num_labels == 0 {
            return Err(Error::Config("label set is empty".into()));
        }
        if embeddings.ndim() != 2 || embeddings.cols() == 0 {
            return Err(Error::Config("embedding table must be a non-empty matrix".into()));
        }
        let emb_dim = embeddings.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embeddings = store.add(EMBEDDINGS_PARAM, embeddings, config.fine_tune_embeddings);
        let hidden = config.gru_hidden();
        let layers = config.enc_layers;
        let scale = config.scale_by_length;
        let s = &mut store;
        let r = &mut rng;
        let bigru = |s: &mut ParamStore, r: &mut ChaCha8Rng, name: &str, input: usize| {
            BiGruEncoder::new(s, r, name, input, hidden, layers)
        };
        let flat_encoder = |s: &mut ParamStore, r: &mut ChaCha8Rng, cnn: bool| {
            if cnn {
                Encoder::Cnn(CnnEncoder::new(
                    s,
                    r,
                    "encoder",
                    emb_dim,
                    config.enc_units,
                    config.kernel_width,
                    Activation::Tanh,
                ))
            } else {
                Encoder::Bigru(bigru(s, r, "encoder", emb_dim))
            }
        };
        let body = match arch {
            Architecture::BigruAtt => {
                let enc = bigru(s, r, "encoder", emb_dim);
                let d = enc.output_dim();
                let att = SelfAttentionHead::new(s, r, "attention", d, AttentionMode::RawScore, scale);
                let dec = Linear::new(s, r, "decoder", d, num_labels);
                Body::BigruAtt { enc, att, dec }
            }
            Architecture::Han | Architecture::MaxHss => {
                let words = bigru(s, r, "encoder.words", emb_dim);
                let d = words.output_dim();
                let word_att =
                    SelfAttentionHead::new(s, r, "attention.words", d, AttentionMode::TanhProjected, scale);
                if arch == Architecture::Han {
                    let sections = bigru(s, r, "encoder.sections", d);
                    let section_att =
                        SelfAttentionHead::new(s, r, "attention.sections", d, AttentionMode::TanhProjected, scale);
                    let dec = Linear::new(s, r, "decoder", d, num_labels);
                    Body::Han {
                        words,
                        word_att,
                        sections,
                        section_att,
                        dec,
                    }
                } else {
                    let dec = Linear::new(s, r, "decoder", d, num_labels);
                    Body::MaxHss { words, word_att, dec }
                }
            }
            Architecture::CnnLwan | Architecture::BigruLwan => {
                let enc = flat_encoder(s, r, arch == Architecture::CnnLwan);
                let d = enc.output_dim();
                let lwa = LabelWiseAttention::new(s, r, "attention", d, num_labels);
                let dec = LabelDecoder::new(s, r, num_labels, d, config.tie_decoder.then_some(lwa.contexts));
                Body::Lwan { enc, lwa, dec }
            }
            Architecture::ZCnnLwan | Architecture::ZBigruLwan => {
                let u = label_vectors.ok_or_else(|| Error::Config("zero-shot models need label vectors".into()))?;
                if u.ndim() != 2 || u.rows() != num_labels {
                    return Err(Error::Config(format!(
                        "label vectors have shape {:?}, expected {num_labels} rows",
                        u.shape()
                    )));
                }
                let enc = flat_encoder(s, r, arch == Architecture::ZCnnLwan);
                let zs = ZeroShotAttention::new(s, r, "attention", enc.output_dim(), u)?;
                Body::ZeroShot { enc, zs }
            }
            Architecture::LwHan => {
                let words = bigru(s, r, "encoder.words", emb_dim);
                let d = words.output_dim();
                let lwa = LabelWiseAttention::new(s, r, "attention", d, num_labels);
                let dec = LabelDecoder::new(s, r, num_labels, d, config.tie_decoder.then_some(lwa.contexts));
                Body::LwHan { words, lwa, dec }
            }
            _ => unreachable!("checked by is_neural"),
        };
        Ok(Self {
            config: config.clone(),
            store,
            embeddings,
            body,
            num_labels,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn embeddings(&self) -> ParamId {
        self.embeddings
    }

    /// Frozen `[L×emb_dim]` label vectors of zero-shot models.
    pub fn label_vectors(&self) -> Option<ParamId> {
        match &self.body {
            Body::ZeroShot { zs, .. } => Some(zs.label_vectors),
            _ => None,
        }
    }

    /// Decoder weight rows, one per label, when the decoder is label-wise.
    pub fn label_decoder(&self) -> Option<(ParamId, ParamId)> {
        match &self.body {
            Body::Lwan { dec, .. } | Body::LwHan { dec, .. } => Some((dec.w, dec.b)),
            _ => None,
        }
    }

    /// Truncates a document the same way for training and evaluation.
    pub fn prepare(&self, doc: &TokenizedDocument) -> Result<Prepared> {
        let c = &self.config;
        let p = if c.architecture.is_hierarchical() {
            let s = doc.sectioned(c.max_sections, c.max_section_tokens);
            if s.is_empty() {
                return Err(DataError::EmptyDocument(doc.doc_id.clone()).into());
            }
            Prepared::Sections(s)
        } else {
            let f = doc.flat(c.max_doc_tokens);
            if f.is_empty() {
                return Err(DataError::EmptyDocument(doc.doc_id.clone()).into());
            }
            Prepared::Flat(f)
        };
        Ok(p)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, input: &Prepared, dropout: Option<&mut Dropout>) -> Result<(Var, AttentionTrace)> {
        match input {
            Prepared::Flat(ids) => self.forward_flat(tape, ids, None, dropout),
            Prepared::Sections(s) => self.forward_sections(tape, s, dropout),
        }
    }

    fn embed(&self, tape: &mut Tape<'_>, ids: &[usize], mask: Option<&[bool]>, dropout: Option<&mut Dropout>) -> Result<Var> {
        let mut keep: Vec<bool> = mask.map_or_else(|| vec![true; ids.len()], <[bool]>::to_vec);
        if let Some(d) = dropout {
            for (k, w) in keep.iter_mut().zip(d.word_mask(ids.len())) {
                *k &= w;
            }
        }
        let table = tape.param(self.embeddings);
        let all_kept = keep.iter().all(|&k| k);
        Ok(tape.gather_rows(table, ids, (!all_kept).then_some(keep.as_slice()))?)
    }

    /// Flat architectures over a possibly right-padded id sequence; masked
    /// positions do not influence the output.
    pub fn forward_flat(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        mask: Option<&[bool]>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, AttentionTrace)> {
        if ids.is_empty() || mask.is_some_and(|m| !m.iter().any(|&k| k)) {
            return Err(DataError::EmptyDocument(String::new()).into());
        }
        let x = self.embed(tape, ids, mask, dropout.as_deref_mut())?;
        match &self.body {
            Body::BigruAtt { enc, att, dec } => {
                let h = enc.encode(tape, x, mask, dropout.as_deref_mut())?;
                let h = maybe_dropout(tape, h, dropout)?;
                let (w, d) = att.attend(tape, h, mask)?;
                let logits = dec.forward(tape, d)?;
                Ok((tape.sigmoid(logits)?, AttentionTrace::Single(w)))
            }
            Body::Lwan { enc, lwa, dec } => {
                let h = enc.encode(tape, x, mask, dropout)?;
                let (w, d) = lwa.attend(tape, h, mask)?;
                Ok((dec.forward(tape, d)?, AttentionTrace::LabelWise(w)))
            }
            Body::ZeroShot { enc, zs } => {
                let h = enc.encode(tape, x, mask, dropout)?;
                let (w, _, p) = zs.attend(tape, h, mask)?;
                Ok((p, AttentionTrace::LabelWise(w)))
            }
            _ => Err(Error::Config(format!("{} expects sectioned input", self.architecture()))),
        }
    }

    pub fn forward_sections(
        &self,
        tape: &mut Tape<'_>,
        sections: &[Vec<usize>],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, AttentionTrace)> {
        if sections.is_empty() || sections.iter().any(Vec::is_empty) {
            return Err(DataError::EmptyDocument(String::new()).into());
        }
        let mut encoded = Vec::with_capacity(sections.len());
        for s in sections {
            let x = self.embed(tape, s, None, dropout.as_deref_mut())?;
            let words = match &self.body {
                Body::Han { words, .. } | Body::MaxHss { words, .. } | Body::LwHan { words, .. } => words,
                _ => return Err(Error::Config(format!("{} expects flat input", self.architecture()))),
            };
            let h = words.encode(tape, x, None, dropout.as_deref_mut())?;
            encoded.push(maybe_dropout(tape, h, dropout.as_deref_mut())?);
        }
        match &self.body {
            Body::Han {
                word_att,
                sections: section_enc,
                section_att,
                dec,
                ..
            } => {
                let mut pooled = Vec::new();
                let mut weights = Vec::new();
                for &h in &encoded {
                    let (w, c) = word_att.attend(tape, h, None)?;
                    weights.push(w);
                    pooled.push(c);
                }
                let c = tape.stack_rows(&pooled)?;
                let hs = section_enc.encode(tape, c, None, dropout.as_deref_mut())?;
                let hs = maybe_dropout(tape, hs, dropout)?;
                let (sw, d) = section_att.attend(tape, hs, None)?;
                let logits = dec.forward(tape, d)?;
                let trace = AttentionTrace::Hierarchical {
                    words: weights,
                    sections: sw,
                };
                Ok((tape.sigmoid(logits)?, trace))
            }
            Body::MaxHss { word_att, dec, .. } => {
                let mut probs = Vec::new();
                let mut weights = Vec::new();
                for &h in &encoded {
                    let (w, c) = word_att.attend(tape, h, None)?;
                    let logits = dec.forward(tape, c)?;
                    probs.push(tape.sigmoid(logits)?);
                    weights.push(w);
                }
                let p = tape.stack_rows(&probs)?;
                Ok((tape.maxpool_rows(p)?, AttentionTrace::SectionWords(weights)))
            }
            Body::LwHan { lwa, dec, .. } => {
                let mut probs = Vec::new();
                let mut weights = Vec::new();
                for &h in &encoded {
                    let (w, d) = lwa.attend(tape, h, None)?;
                    probs.push(dec.forward(tape, d)?);
                    weights.push(w);
                }
                let p = tape.stack_rows(&probs)?;
                Ok((tape.maxpool_rows(p)?, AttentionTrace::SectionLabelWise(weights)))
            }
            _ => unreachable!("checked above"),
        }
    }

    /// Evaluation-mode scores for one document.
    pub fn predict(&self, doc: &TokenizedDocument) -> Result<Vec<f64>> {
        let input = self.prepare(doc)?;
        let mut tape = Tape::new(&self.store);
        let (p, _) = self.forward(&mut tape, &input, None)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Scores documents in parallel; row order follows `docs`.
    pub fn predict_all(&self, docs: &[TokenizedDocument]) -> Result<Vec<Vec<f64>>> {
        docs.par_iter().map(|d| self.predict(d)).collect()
    }
}
