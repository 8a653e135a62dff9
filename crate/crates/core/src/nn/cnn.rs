use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::glorot;
use crate::tensor::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// One convolution layer over time with same-length zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnEncoder {
    pub kernel_width: usize,
    pub num_filters: usize,
    pub activation: Activation,
    pub input_dim: usize,
    w: ParamId,
    b: ParamId,
}

impl CnnEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        num_filters: usize,
        kernel_width: usize,
        activation: Activation,
    ) -> Self {
        let kernel_width = kernel_width.max(1);
        let w = store.add(
            format!("{name}.filters"),
            glorot(rng, num_filters, kernel_width * input_dim),
            true,
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[num_filters]), true);
        Self {
            kernel_width,
            num_filters,
            activation,
            input_dim,
            w,
            b,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.num_filters
    }

    pub fn filters(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    /// `[T×input_dim]` to `[T×num_filters]`. Padding positions must already be
    /// zero rows, which makes them indistinguishable from the border padding.
    pub fn encode(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var> {
        if tape.shape(input).first().copied().unwrap_or(0) == 0 {
            return Err(TensorError::Empty("encode_cnn"));
        }
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let conv = tape.conv1d_same(input, w, b, self.kernel_width)?;
        match self.activation {
            Activation::Tanh => tape.tanh(conv),
            Activation::Identity => Ok(conv),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unit_width_is_a_per_token_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::new(&mut store, &mut rng, "cnn", 2, 2, 1, Activation::Identity);
        store.get_mut(enc.filters()).value = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut tape = Tape::new(&store);
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let xv = tape.constant(x.clone());
        let out = enc.encode(&mut tape, xv).unwrap();
        assert_eq!(tape.value(out), &x);
    }

    #[test]
    fn zero_filters_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::new(&mut store, &mut rng, "cnn", 3, 4, 8, Activation::Tanh);
        store.get_mut(enc.filters()).value.data_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(Tensor::filled(&[5, 3], 0.7));
        let out = enc.encode(&mut tape, xv).unwrap();
        assert_eq!(tape.shape(out), &[5, 4]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        let empty = tape.constant(Tensor::zeros(&[0, 3]));
        assert!(enc.encode(&mut tape, empty).is_err());
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::new(&mut store, &mut rng, "cnn", 3, 4, 3, Activation::Tanh);
        let x = Tensor::new(vec![5, 3], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = store.add("x", x, true);
        let report = check_gradients(&mut store, 1e-5, |tape| {
            let xv = tape.param(x);
            let out = enc.encode(tape, xv)?;
            let sq = tape.mul(out, out)?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn zero_padding_rows_are_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::new(&mut store, &mut rng, "cnn", 2, 3, 4, Activation::Tanh);
        let x = Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let mut padded = x.data().to_vec();
        padded.extend([0.0; 4]);
        let xp = Tensor::matrix(5, 2, padded).unwrap();
        let mut tape = Tape::new(&store);
        let (a, b) = (tape.constant(x), tape.constant(xp));
        let ya = enc.encode(&mut tape, a).unwrap();
        let yb = enc.encode(&mut tape, b).unwrap();
        for t in 0..3 {
            assert_eq!(tape.value(ya).row(t), tape.value(yb).row(t));
        }
    }
}
