//! Encoders and attention blocks. Blocks only hold [`ParamId`]s; values live
//! in the model's [`ParamStore`].

mod attention;
mod cnn;
mod gru;

pub use attention::{label_embed, AttentionMode, LabelWiseAttention, SelfAttentionHead, ZeroShotAttention};
pub use cnn::{Activation, CnnEncoder};
pub use gru::{BiGruEncoder, GruCell};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamStore, Result, Tape, Tensor, Var};

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, &[rows, cols], (6.0 / (rows + cols) as f64).sqrt())
}

/// Fully connected layer `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input_dim: usize, output_dim: usize) -> Self {
        let w = store.add(format!("{name}.weight"), glorot(rng, output_dim, input_dim), true);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[output_dim]), true);
        Self {
            w,
            b,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.linear(x, w, b)
    }
}

/// Training-time randomness: inverted dropout on hidden states and whole-token
/// word dropout on embeddings.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    pub word_rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, word_rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, word_rate, rng }
    }

    /// Scales kept units by `1 / (1 - rate)`; identity at rate zero.
    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let n = tape.value(x).numel();
        let factor = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, factor)
    }

    /// Per-token keep flags for word dropout.
    pub fn word_mask(&mut self, len: usize) -> Vec<bool> {
        (0..len)
            .map(|_| self.word_rate <= 0.0 || self.rng.gen::<f64>() >= self.word_rate)
            .collect()
    }
}

/// Applies optional dropout.
pub fn maybe_dropout(tape: &mut Tape<'_>, x: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dropout_is_inverted() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::filled(&[10_000], 1.0));
        let mut d = Dropout::new(0.25, 0.0, ChaCha8Rng::seed_from_u64(1));
        let y = d.apply(&mut tape, x).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");

        let mut off = Dropout::new(0.0, 0.0, ChaCha8Rng::seed_from_u64(1));
        assert_eq!(off.apply(&mut tape, x).unwrap(), x);
        assert!(off.word_mask(5).iter().all(|&k| k));
    }
}
