use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, LabelCatalog, TokenizedDocument};
use crate::error::{Error, Result};
use crate::metrics::rank;
use crate::models::{Architecture, AttentionTrace, NeuralModel, Prepared};
use crate::tensor::Tape;

/// One attention distribution over the document's tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// The label this head belongs to, for label-wise models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionAttention {
    pub weight: f64,
    pub tokens: Vec<String>,
    pub word_weights: Vec<f64>,
}

/// Heat-map data for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub doc_id: String,
    pub architecture: Architecture,
    /// Flat models only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heads: Vec<AttentionHead>,
    /// HAN only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<SectionAttention>,
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        w.to_vec()
    }
}

fn words(ids: &[usize], embeddings: &EmbeddingMatrix) -> Vec<String> {
    ids.iter().map(|&i| embeddings.token(i).to_owned()).collect()
}

/// Attention weights of BIGRU-ATT (one head), HAN (section and word
/// weights) and the label-wise models (one head per top-`top_k` label).
pub fn export_attention(
    model: &NeuralModel,
    doc: &TokenizedDocument,
    catalog: &LabelCatalog,
    embeddings: &EmbeddingMatrix,
    top_k: usize,
) -> Result<AttentionRecord> {
    use Architecture::*;
    let arch = model.architecture();
    if !matches!(arch, BigruAtt | Han | CnnLwan | BigruLwan | ZCnnLwan | ZBigruLwan) {
        return Err(Error::Config(format!("attention export does not support {arch}")));
    }
    let input = model.prepare(doc)?;
    let mut tape = Tape::new(&model.store);
    let (p, trace) = model.forward(&mut tape, &input, None)?;
    let mut record = AttentionRecord {
        doc_id: doc.doc_id.clone(),
        architecture: arch,
        tokens: Vec::new(),
        heads: Vec::new(),
        sections: Vec::new(),
    };
    match (&input, trace) {
        (Prepared::Flat(ids), AttentionTrace::Single(w)) => {
            record.tokens = words(ids, embeddings);
            record.heads.push(AttentionHead {
                label_id: None,
                descriptor: None,
                score: None,
                weights: normalized(tape.value(w).data()),
            });
        }
        (Prepared::Flat(ids), AttentionTrace::LabelWise(w)) => {
            record.tokens = words(ids, embeddings);
            let scores = tape.value(p).data().to_vec();
            let weights = tape.value(w);
            for l in rank(&scores).into_iter().take(top_k) {
                let entry = catalog.get(l);
                record.heads.push(AttentionHead {
                    label_id: Some(entry.id.clone()),
                    descriptor: Some(entry.descriptor.clone()),
                    score: Some(scores[l]),
                    weights: normalized(weights.row(l)),
                });
            }
        }
        (Prepared::Sections(sections), AttentionTrace::Hierarchical { words: w, sections: sw }) => {
            let section_weights = normalized(tape.value(sw).data());
            for ((ids, w), weight) in sections.iter().zip(w).zip(section_weights) {
                record.sections.push(SectionAttention {
                    weight,
                    tokens: words(ids, embeddings),
                    word_weights: normalized(tape.value(w).data()),
                });
            }
        }
        _ => unreachable!("architecture checked above"),
    }
    Ok(record)
}
