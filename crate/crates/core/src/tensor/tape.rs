use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Gradients, ParamId, ParamStore, Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    MatMulNt { a: usize, b: usize, m: usize, k: usize, n: usize },
    Linear { x: usize, w: usize, b: usize, rows: usize, inp: usize, out: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine { a: usize, scale: f64 },
    Tanh(usize),
    Sigmoid(usize),
    Softmax { x: usize, rows: usize, cols: usize },
    MaxPoolRows { x: usize, argmax: Vec<usize> },
    Row { x: usize, i: usize },
    StackRows(Vec<usize>),
    Concat(Vec<usize>),
    RowsDot { a: usize, b: usize },
    Sum(usize),
    Gather { table: usize, ids: Vec<usize>, kept: Vec<bool> },
    MulConst { a: usize, factor: Vec<f64> },
    Conv1d { x: usize, w: usize, b: usize, width: usize },
    Bce { p: usize, grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    param: Option<ParamId>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass. Parameters are read from the
/// borrowed [`ParamStore`]; a tape is confined to one thread.
pub struct Tape<'p> {
    id: u64,
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn mm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
fn mm_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
fn mm_tn_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Splits a tensor into (rows, cols) for matrix arithmetic, treating a vector
/// as a single row or column.
fn as_matrix(t: &Tensor, vector_as_row: bool) -> Option<(usize, usize)> {
    match t.shape() {
        [n] if vector_as_row => Some((1, *n)),
        [n] => Some((*n, 1)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(TensorError::Detached);
        }
        Ok(v.idx)
    }

    /// Current value of a recorded variable.
    pub fn value(&self, v: Var) -> &Tensor {
        self.node_value(v.idx)
    }

    fn node_value(&self, idx: usize) -> &Tensor {
        let node = &self.nodes[idx];
        match node.param {
            Some(pid) => self.params.value(pid),
            None => node.value.as_ref().expect("owned node value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[usize], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value: Some(value),
            param: None,
            op,
            requires_grad,
        });
        Ok(Var { tape: self.id, idx })
    }

    /// Records a constant input. Constants never receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value: Some(value),
            param: None,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var { tape: self.id, idx }
    }

    /// Records a parameter read. Repeated reads of one parameter share a node
    /// so their gradients accumulate.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let idx = self.nodes.len();
        let trainable = self.params.get(id).trainable;
        self.nodes.push(Node {
            value: None,
            param: Some(id),
            op: Op::Param(id),
            requires_grad: trainable,
        });
        let v = Var { tape: self.id, idx };
        self.param_nodes.insert(id, v);
        v
    }

    /// Matrix product. Either operand may be a vector: `[k]·[k×n] → [n]` and
    /// `[m×k]·[k] → [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (at, bt) = (self.node_value(ai), self.node_value(bi));
        let (m, k) = as_matrix(at, true).ok_or_else(|| shape_err("matmul", at, bt))?;
        let (k2, n) = as_matrix(bt, false).ok_or_else(|| shape_err("matmul", at, bt))?;
        if k != k2 {
            return Err(shape_err("matmul", at, bt));
        }
        let mut out = vec![0.0; m * n];
        mm_acc(&mut out, at.data(), bt.data(), m, k, n);
        let shape = match (at.ndim(), bt.ndim()) {
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        let value = Tensor::new(shape, out)?;
        self.push(Op::MatMul { a: ai, b: bi, m, k, n }, value, &[ai, bi], "matmul")
    }

    /// `a[m×k] · b[n×k]ᵀ → [m×n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (at, bt) = (self.node_value(ai), self.node_value(bi));
        if at.ndim() != 2 || bt.ndim() != 2 || at.cols() != bt.cols() {
            return Err(shape_err("matmul_nt", at, bt));
        }
        let (m, k, n) = (at.rows(), at.cols(), bt.rows());
        let mut out = vec![0.0; m * n];
        mm_nt_acc(&mut out, at.data(), bt.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMulNt { a: ai, b: bi, m, k, n }, value, &[ai, bi], "matmul_nt")
    }

    /// Affine layer `x·Wᵀ + b` applied to a vector `[in]` or to every row of
    /// a matrix `[T×in]`; `w` is `[out×in]`, `b` is `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let (xt, wt, btn) = (self.node_value(xi), self.node_value(wi), self.node_value(bi));
        let (rows, inp) = as_matrix(xt, true).ok_or_else(|| shape_err("linear", xt, wt))?;
        if wt.ndim() != 2 || wt.cols() != inp {
            return Err(shape_err("linear", xt, wt));
        }
        let out = wt.rows();
        if btn.shape() != [out] {
            return Err(shape_err("linear", wt, btn));
        }
        let mut data = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            data.extend_from_slice(btn.data());
        }
        mm_nt_acc(&mut data, xt.data(), wt.data(), rows, inp, out);
        let shape = if xt.ndim() == 1 { vec![out] } else { vec![rows, out] };
        let value = Tensor::new(shape, data)?;
        self.push(
            Op::Linear { x: xi, w: wi, b: bi, rows, inp, out },
            value,
            &[xi, wi, bi],
            "linear",
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (at, bt) = (self.node_value(ai), self.node_value(bi));
        let value = if at.shape() == bt.shape() {
            let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(at.shape().to_vec(), data)?
        } else if bt.numel() == 1 {
            let y = bt.item();
            let data = at.data().iter().map(|&x| f(x, y)).collect();
            Tensor::new(at.shape().to_vec(), data)?
        } else if at.numel() == 1 {
            let x = at.item();
            let data = bt.data().iter().map(|&y| f(x, y)).collect();
            Tensor::new(bt.shape().to_vec(), data)?
        } else {
            return Err(shape_err(name, at, bt));
        };
        self.push(make(ai, bi), value, &[ai, bi], name)
    }

    /// Elementwise sum; a one-element operand broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product; a one-element operand broadcasts.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let at = self.node_value(ai);
        let data = at.data().iter().map(|&x| scale * x + shift).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        self.push(Op::Affine { a: ai, scale }, value, &[ai], "affine")
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let ai = self.check(a)?;
        let at = self.node_value(ai);
        let data = at.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        self.push(op(ai), value, &[ai], name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid)
    }

    /// Softmax of a vector. Positions with `mask[i] == false` are excluded and
    /// receive weight exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xi = self.check(x)?;
        if self.node_value(xi).ndim() != 1 {
            return Err(TensorError::Shape {
                op: "softmax",
                left: self.node_value(xi).shape().to_vec(),
                right: vec![],
            });
        }
        self.softmax_impl(xi, mask)
    }

    /// Row-wise softmax of a matrix `[R×C]`; `mask` has length `C` and applies
    /// to every row.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xi = self.check(x)?;
        if self.node_value(xi).ndim() != 2 {
            return Err(TensorError::Shape {
                op: "softmax_rows",
                left: self.node_value(xi).shape().to_vec(),
                right: vec![],
            });
        }
        self.softmax_impl(xi, mask)
    }

    fn softmax_impl(&mut self, xi: usize, mask: Option<&[bool]>) -> Result<Var> {
        let xt = self.node_value(xi);
        let (rows, cols) = if xt.ndim() == 1 { (1, xt.numel()) } else { (xt.rows(), xt.cols()) };
        if cols == 0 {
            return Err(TensorError::Empty("softmax"));
        }
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(TensorError::Shape {
                    op: "softmax",
                    left: xt.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(TensorError::Empty("softmax"));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xt.data()[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for j in 0..cols {
                if keep(j) {
                    orow[j] = (row[j] - max).exp();
                    total += orow[j];
                }
            }
            for v in orow.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        self.push(Op::Softmax { x: xi, rows, cols }, value, &[xi], "softmax")
    }

    /// Column-wise maximum of `[S×L]`. The gradient goes to the first row
    /// holding the maximum.
    pub fn maxpool_rows(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let xt = self.node_value(xi);
        if xt.ndim() != 2 {
            return Err(TensorError::Shape {
                op: "maxpool_rows",
                left: xt.shape().to_vec(),
                right: vec![],
            });
        }
        let (s, l) = (xt.rows(), xt.cols());
        if s == 0 {
            return Err(TensorError::Empty("maxpool_rows"));
        }
        let mut argmax = vec![0usize; l];
        let mut out = xt.row(0).to_vec();
        for r in 1..s {
            for (j, &v) in xt.row(r).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = r;
                }
            }
        }
        let value = Tensor::vector(out);
        self.push(Op::MaxPoolRows { x: xi, argmax }, value, &[xi], "maxpool_rows")
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xt = self.node_value(xi);
        if xt.ndim() != 2 {
            return Err(TensorError::Shape {
                op: "row",
                left: xt.shape().to_vec(),
                right: vec![],
            });
        }
        if i >= xt.rows() {
            return Err(TensorError::Index {
                op: "row",
                index: i,
                size: xt.rows(),
            });
        }
        let value = Tensor::vector(xt.row(i).to_vec());
        self.push(Op::Row { x: xi, i }, value, &[xi], "row")
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(TensorError::Empty("stack_rows"));
        }
        let idx: Vec<usize> = rows.iter().map(|&r| self.check(r)).collect::<Result<_>>()?;
        let first = self.node_value(idx[0]);
        let c = first.numel();
        let mut data = Vec::with_capacity(c * idx.len());
        for &i in &idx {
            let t = self.node_value(i);
            if t.ndim() != 1 || t.numel() != c {
                return Err(shape_err("stack_rows", first, t));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![idx.len(), c], data)?;
        let inputs = idx.clone();
        self.push(Op::StackRows(idx), value, &inputs, "stack_rows")
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        let idx: Vec<usize> = parts.iter().map(|&r| self.check(r)).collect::<Result<_>>()?;
        let mut data = Vec::new();
        for &i in &idx {
            let t = self.node_value(i);
            if t.ndim() != 1 {
                return Err(TensorError::Shape {
                    op: "concat",
                    left: t.shape().to_vec(),
                    right: vec![],
                });
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::vector(data);
        let inputs = idx.clone();
        self.push(Op::Concat(idx), value, &inputs, "concat")
    }

    /// Per-row dot products of two `[L×d]` matrices, giving `[L]`.
    pub fn rows_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (at, bt) = (self.node_value(ai), self.node_value(bi));
        if at.shape() != bt.shape() || at.ndim() != 2 {
            return Err(shape_err("rows_dot", at, bt));
        }
        let out = (0..at.rows())
            .map(|r| at.row(r).iter().zip(bt.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let value = Tensor::vector(out);
        self.push(Op::RowsDot { a: ai, b: bi }, value, &[ai, bi], "rows_dot")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let s = self.node_value(ai).data().iter().sum();
        self.push(Op::Sum(ai), Tensor::scalar(s), &[ai], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(TensorError::Empty("mean"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Looks up rows of `table [V×e]`. Rows flagged `false` in `kept` become
    /// zero vectors and receive no gradient.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], kept: Option<&[bool]>) -> Result<Var> {
        let ti = self.check(table)?;
        let tt = self.node_value(ti);
        if tt.ndim() != 2 {
            return Err(TensorError::Shape {
                op: "gather_rows",
                left: tt.shape().to_vec(),
                right: vec![],
            });
        }
        if ids.is_empty() {
            return Err(TensorError::Empty("gather_rows"));
        }
        let e = tt.cols();
        if kept.is_some_and(|k| k.len() != ids.len()) {
            return Err(TensorError::Length {
                op: "gather_rows",
                shape: vec![ids.len()],
                len: kept.map_or(0, <[bool]>::len),
            });
        }
        let kept: Vec<bool> = kept.map_or_else(|| vec![true; ids.len()], <[bool]>::to_vec);
        let mut data = vec![0.0; ids.len() * e];
        for (t, &id) in ids.iter().enumerate() {
            if id >= tt.rows() {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    size: tt.rows(),
                });
            }
            if kept[t] {
                data[t * e..(t + 1) * e].copy_from_slice(tt.row(id));
            }
        }
        let value = Tensor::new(vec![ids.len(), e], data)?;
        self.push(
            Op::Gather {
                table: ti,
                ids: ids.to_vec(),
                kept,
            },
            value,
            &[ti],
            "gather_rows",
        )
    }

    /// Multiplies by a constant array of the same shape (dropout masks).
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        let ai = self.check(a)?;
        let at = self.node_value(ai);
        if factor.len() != at.numel() {
            return Err(TensorError::Length {
                op: "mul_const",
                shape: at.shape().to_vec(),
                len: factor.len(),
            });
        }
        let data = at.data().iter().zip(&factor).map(|(x, f)| x * f).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        self.push(Op::MulConst { a: ai, factor }, value, &[ai], "mul_const")
    }

    /// 1-D convolution over time with zero padding that preserves length.
    /// `x` is `[T×e]`, `w` is `[F×(width·e)]` laid out kernel-position major,
    /// `b` is `[F]`. The window for output `t` covers inputs
    /// `t - (width-1)/2 ..= t + width/2`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var, width: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let (xt, wt, btn) = (self.node_value(xi), self.node_value(wi), self.node_value(bi));
        if xt.ndim() != 2 || wt.ndim() != 2 || width == 0 || wt.cols() != width * xt.cols() {
            return Err(shape_err("conv1d_same", xt, wt));
        }
        let (t_len, e, f) = (xt.rows(), xt.cols(), wt.rows());
        if btn.shape() != [f] {
            return Err(shape_err("conv1d_same", wt, btn));
        }
        if t_len == 0 {
            return Err(TensorError::Empty("conv1d_same"));
        }
        let left = (width - 1) / 2;
        let mut out = vec![0.0; t_len * f];
        for t in 0..t_len {
            let orow = &mut out[t * f..(t + 1) * f];
            orow.copy_from_slice(btn.data());
            for j in 0..width {
                let src = t as isize + j as isize - left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let xrow = xt.row(src as usize);
                for (fi, o) in orow.iter_mut().enumerate() {
                    let wrow = &wt.row(fi)[j * e..(j + 1) * e];
                    *o += xrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let value = Tensor::new(vec![t_len, f], out)?;
        self.push(Op::Conv1d { x: xi, w: wi, b: bi, width }, value, &[xi, wi, bi], "conv1d_same")
    }

    /// Masked binary cross-entropy averaged over unmasked positions, with
    /// probabilities clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[f64], mask: &[f64]) -> Result<Var> {
        const EPS: f64 = 1e-7;
        let pi = self.check(p)?;
        let pt = self.node_value(pi);
        if pt.numel() != targets.len() || pt.numel() != mask.len() {
            return Err(TensorError::Length {
                op: "bce",
                shape: pt.shape().to_vec(),
                len: targets.len().min(mask.len()),
            });
        }
        let denom: f64 = mask.iter().sum();
        if denom <= 0.0 {
            return Err(TensorError::Empty("bce"));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0; pt.numel()];
        for (l, &prob) in pt.data().iter().enumerate() {
            let (y, m) = (targets[l], mask[l]);
            if m == 0.0 {
                continue;
            }
            let clamped = prob.clamp(EPS, 1.0 - EPS);
            loss -= m * (y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln());
            if clamped == prob {
                grad[l] = -m * (y / prob - (1.0 - y) / (1.0 - prob)) / denom;
            }
        }
        self.push(Op::Bce { p: pi, grad }, Tensor::scalar(loss / denom), &[pi], "bce")
    }

    /// Back-propagates from a scalar `loss` and returns gradients for every
    /// trainable parameter read on this tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.check(loss)?;
        let lt = self.node_value(li);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);
        let mut out = Gradients::empty(self.params.len());

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let needs = |j: usize| self.nodes[j].requires_grad;
            let mut acc = |j: usize, delta: Vec<f64>| {
                if !self.nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => {
                        for (e, d) in existing.iter_mut().zip(delta) {
                            *e += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    out.accumulate(*pid, self.params.value(*pid).shape(), &g);
                }
                &Op::MatMul { a, b, m, k, n } => {
                    let (av, bv) = (self.node_value(a).data(), self.node_value(b).data());
                    if needs(a) {
                        let mut ga = vec![0.0; m * k];
                        mm_nt_acc(&mut ga, &g, bv, m, n, k);
                        acc(a, ga);
                    }
                    if needs(b) {
                        let mut gb = vec![0.0; k * n];
                        mm_tn_acc(&mut gb, av, &g, m, k, n);
                        acc(b, gb);
                    }
                }
                &Op::MatMulNt { a, b, m, k, n } => {
                    let (av, bv) = (self.node_value(a).data(), self.node_value(b).data());
                    if needs(a) {
                        let mut ga = vec![0.0; m * k];
                        mm_acc(&mut ga, &g, bv, m, n, k);
                        acc(a, ga);
                    }
                    if needs(b) {
                        let mut gb = vec![0.0; n * k];
                        mm_tn_acc(&mut gb, &g, av, m, n, k);
                        acc(b, gb);
                    }
                }
                &Op::Linear { x, w, b, rows, inp, out: o } => {
                    let (xv, wv) = (self.node_value(x).data(), self.node_value(w).data());
                    if needs(x) {
                        let mut gx = vec![0.0; rows * inp];
                        mm_acc(&mut gx, &g, wv, rows, o, inp);
                        acc(x, gx);
                    }
                    if needs(w) {
                        let mut gw = vec![0.0; o * inp];
                        mm_tn_acc(&mut gw, &g, xv, rows, o, inp);
                        acc(w, gw);
                    }
                    if needs(b) {
                        let mut gb = vec![0.0; o];
                        for r in 0..rows {
                            for (d, s) in gb.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                                *d += s;
                            }
                        }
                        acc(b, gb);
                    }
                }
                &Op::Add(a, b) | &Op::Sub(a, b) | &Op::Mul(a, b) => {
                    let (at, bt) = (self.node_value(a), self.node_value(b));
                    let is_mul = matches!(node.op, Op::Mul(..));
                    let sign_b = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let n = g.len();
                    let av = |j: usize| if at.numel() == 1 { at.item() } else { at.data()[j] };
                    let bv = |j: usize| if bt.numel() == 1 { bt.item() } else { bt.data()[j] };
                    if needs(a) {
                        let full: Vec<f64> = (0..n).map(|j| if is_mul { g[j] * bv(j) } else { g[j] }).collect();
                        acc(a, reduce_broadcast(full, at.numel()));
                    }
                    if needs(b) {
                        let full: Vec<f64> = (0..n)
                            .map(|j| if is_mul { g[j] * av(j) } else { sign_b * g[j] })
                            .collect();
                        acc(b, reduce_broadcast(full, bt.numel()));
                    }
                }
                &Op::Affine { a, scale } => {
                    acc(a, g.iter().map(|v| v * scale).collect());
                }
                &Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("owned").data();
                    acc(a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
                }
                &Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("owned").data();
                    acc(a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
                }
                &Op::Softmax { x, rows, cols } => {
                    let y = node.value.as_ref().expect("owned").data();
                    let mut gx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gx[r * cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(x, gx);
                }
                Op::MaxPoolRows { x, argmax } => {
                    let xt = self.node_value(*x);
                    let l = xt.cols();
                    let mut gx = vec![0.0; xt.numel()];
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[r * l + j] = g[j];
                    }
                    acc(*x, gx);
                }
                &Op::Row { x, i: r } => {
                    let xt = self.node_value(x);
                    let c = xt.cols();
                    let mut gx = vec![0.0; xt.numel()];
                    gx[r * c..(r + 1) * c].copy_from_slice(&g);
                    acc(x, gx);
                }
                Op::StackRows(idx) => {
                    let c = g.len() / idx.len();
                    for (r, &j) in idx.iter().enumerate() {
                        acc(j, g[r * c..(r + 1) * c].to_vec());
                    }
                }
                Op::Concat(idx) => {
                    let mut off = 0;
                    for &j in idx {
                        let n = self.node_value(j).numel();
                        acc(j, g[off..off + n].to_vec());
                        off += n;
                    }
                }
                &Op::RowsDot { a, b } => {
                    let (at, bt) = (self.node_value(a), self.node_value(b));
                    let d = at.cols();
                    if needs(a) {
                        let ga = (0..at.numel()).map(|j| g[j / d] * bt.data()[j]).collect();
                        acc(a, ga);
                    }
                    if needs(b) {
                        let gb = (0..bt.numel()).map(|j| g[j / d] * at.data()[j]).collect();
                        acc(b, gb);
                    }
                }
                &Op::Sum(a) => {
                    let n = self.node_value(a).numel();
                    acc(a, vec![g[0]; n]);
                }
                Op::Gather { table, ids, kept } => {
                    let tt = self.node_value(*table);
                    let e = tt.cols();
                    let mut gt = vec![0.0; tt.numel()];
                    for (t, &id) in ids.iter().enumerate() {
                        if kept[t] {
                            for (d, s) in gt[id * e..(id + 1) * e].iter_mut().zip(&g[t * e..(t + 1) * e]) {
                                *d += s;
                            }
                        }
                    }
                    acc(*table, gt);
                }
                Op::MulConst { a, factor } => {
                    acc(*a, g.iter().zip(factor).map(|(g, f)| g * f).collect());
                }
                &Op::Conv1d { x, w, b, width } => {
                    let (xt, wt) = (self.node_value(x), self.node_value(w));
                    let (t_len, e, f) = (xt.rows(), xt.cols(), wt.rows());
                    let left = (width - 1) / 2;
                    let mut gx = vec![0.0; xt.numel()];
                    let mut gw = vec![0.0; wt.numel()];
                    let mut gb = vec![0.0; f];
                    for t in 0..t_len {
                        let grow = &g[t * f..(t + 1) * f];
                        for (d, s) in gb.iter_mut().zip(grow) {
                            *d += s;
                        }
                        for j in 0..width {
                            let src = t as isize + j as isize - left as isize;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let src = src as usize;
                            let xrow = xt.row(src);
                            for (fi, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let woff = fi * width * e + j * e;
                                let wrow = &wt.data()[woff..woff + e];
                                for c in 0..e {
                                    gx[src * e + c] += gv * wrow[c];
                                    gw[woff + c] += gv * xrow[c];
                                }
                            }
                        }
                    }
                    acc(x, gx);
                    acc(w, gw);
                    acc(b, gb);
                }
                Op::Bce { p, grad } => {
                    acc(*p, grad.iter().map(|v| v * g[0]).collect());
                }
            }
        }
        Ok(out)
    }
}

fn reduce_broadcast(full: Vec<f64>, target: usize) -> Vec<f64> {
    if target == full.len() {
        full
    } else {
        vec![full.iter().sum()]
    }
}
