use rand_chacha::ChaCha8Rng;

use super::{maybe_dropout, uniform, Dropout};
use crate::tensor::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// ñ  = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 − z) ⊙ ñ + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

const GATES: [&str; 3] = ["update", "reset", "candidate"];

impl GruCell {
    /// Weights uniform in `±sqrt(1 / hidden_dim)`, biases zero.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input_dim: usize, hidden_dim: usize) -> Self {
        let bound = (1.0 / hidden_dim as f64).sqrt();
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(store.add(
                format!("{name}.{gate}.input"),
                uniform(rng, &[hidden_dim, input_dim], bound),
                true,
            ));
            u.push(store.add(
                format!("{name}.{gate}.hidden"),
                uniform(rng, &[hidden_dim, hidden_dim], bound),
                true,
            ));
            b.push(store.add(format!("{name}.{gate}.bias"), Tensor::zeros(&[hidden_dim]), true));
        }
        Self {
            input_dim,
            hidden_dim,
            w: w.try_into().expect("three gates"),
            u: u.try_into().expect("three gates"),
            b: b.try_into().expect("three gates"),
        }
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h_prev: Var) -> Result<Var> {
        if tape.shape(x) != [self.input_dim] || tape.shape(h_prev) != [self.hidden_dim] {
            return Err(TensorError::Shape {
                op: "gru_step",
                left: tape.shape(x).to_vec(),
                right: tape.shape(h_prev).to_vec(),
            });
        }
        let gate = |tape: &mut Tape<'_>, g: usize, h: Var| -> Result<Var> {
            let (w, u, b) = (tape.param(self.w[g]), tape.param(self.u[g]), tape.param(self.b[g]));
            let wx = tape.matmul(w, x)?;
            let uh = tape.matmul(u, h)?;
            let s = tape.add(wx, uh)?;
            tape.add(s, b)
        };
        let z = gate(tape, 0, h_prev)?;
        let z = tape.sigmoid(z)?;
        let r = gate(tape, 1, h_prev)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h_prev)?;
        let n = gate(tape, 2, rh)?;
        let n = tape.tanh(n)?;
        let keep_new = tape.affine(z, -1.0, 1.0)?;
        let a = tape.mul(keep_new, n)?;
        let c = tape.mul(z, h_prev)?;
        tape.add(a, c)
    }
}

/// Stacked bidirectional GRU. Position `t` of the output holds the forward
/// state after tokens `0..=t` next to the backward state after tokens `t..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGruEncoder {
    pub layers: Vec<(GruCell, GruCell)>,
    pub hidden_dim: usize,
}

impl BiGruEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
    ) -> Self {
        let layers = (0..num_layers.max(1))
            .map(|l| {
                let inp = if l == 0 { input_dim } else { 2 * hidden_dim };
                (
                    GruCell::new(store, rng, &format!("{name}.layer{l}.forward"), inp, hidden_dim),
                    GruCell::new(store, rng, &format!("{name}.layer{l}.backward"), inp, hidden_dim),
                )
            })
            .collect();
        Self { layers, hidden_dim }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Encodes `[T×input_dim]` into `[T×2·hidden]`. Masked positions leave the
    /// recurrent state untouched, so right padding does not change the outputs
    /// at real positions. Dropout, when given, is applied between layers.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        input: Var,
        mask: Option<&[bool]>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let t_len = tape.shape(input).first().copied().unwrap_or(0);
        if t_len == 0 {
            return Err(TensorError::Empty("encode_bigru"));
        }
        let active = |t: usize| mask.is_none_or(|m| m[t]);
        let zeros = tape.constant(Tensor::zeros(&[self.hidden_dim]));
        let mut x = input;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                x = maybe_dropout(tape, x, dropout.as_deref_mut())?;
            }
            let rows: Vec<Var> = (0..t_len).map(|t| tape.row(x, t)).collect::<Result<_>>()?;
            let mut forward = Vec::with_capacity(t_len);
            let mut h = zeros;
            for (t, &row) in rows.iter().enumerate() {
                if active(t) {
                    h = fwd.step(tape, row, h)?;
                }
                forward.push(h);
            }
            let mut backward = vec![zeros; t_len];
            let mut h = zeros;
            for t in (0..t_len).rev() {
                if active(t) {
                    h = bwd.step(tape, rows[t], h)?;
                }
                backward[t] = h;
            }
            let joined: Vec<Var> = forward
                .iter()
                .zip(&backward)
                .map(|(&f, &b)| tape.concat(&[f, b]))
                .collect::<Result<_>>()?;
            x = tape.stack_rows(&joined)?;
        }
        Ok(x)
    }
}
