use std::borrow::Cow;

use super::kernels::{log_softmax_into, matmul_nn, matmul_nt, matmul_tn, softmax_into};
use super::DiffValue;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    Softmax(Var),
    CausalSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    Sum(Vec<Var>),
    Mse(Var, Var),
    CrossEntropy {
        p: Var,
        q: Var,
        sp: Vec<f64>,
        lq: Vec<f64>,
    },
    Nll {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Append-only record of a differentiable computation.
///
/// Nodes are stored in creation order, which is already a topological order,
/// so the reverse pass is a single backwards sweep. Parameters are borrowed
/// rather than copied; gradients for them are read back with [`Tape::grad`]
/// or [`Tape::take_grad`] once [`Tape::backward`] has run.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'p> {
        &self.nodes[v.0]
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----- leaves -------------------------------------------------------

    /// Records an owned leaf.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if shape.is_empty() || shape.iter().product::<usize>() != data.len() || data.is_empty() {
            return Err(Error::shape("input", &shape, &[data.len()]));
        }
        Ok(self.push(shape, Cow::Owned(data), requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        self.input(shape, data, false)
    }

    /// Borrows a parameter; gradients flow to it iff `requires_grad` is set.
    pub fn bind(&mut self, value: &'p DiffValue) -> Var {
        self.push(
            value.shape().to_vec(),
            Cow::Borrowed(value.data()),
            value.requires_grad(),
            Op::Leaf,
        )
    }

    /// Borrows a parameter as a constant regardless of its `requires_grad`.
    pub fn bind_frozen(&mut self, value: &'p DiffValue) -> Var {
        self.push(value.shape().to_vec(), Cow::Borrowed(value.data()), false, Op::Leaf)
    }

    // ----- accessors ----------------------------------------------------

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// The single entry of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    // ----- elementwise --------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.any_grad(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x * s).collect();
        let rg = self.requires_grad(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), rg, Op::Scale(a, s))
    }

    /// Element-wise mean of two equal-shape values, `(a + b) / 2`.
    pub fn mean_pair(&mut self, a: Var, b: Var) -> Result<Var> {
        let sum = self.add(a, b)?;
        Ok(self.scale(sum, 0.5))
    }

    /// Adds a length-`c` row to every row of an `r×c` value.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(a));
        if self.value(row).len() != c {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let rv = self.value(row);
        let mut out = self.value(a).to_vec();
        for i in 0..r {
            for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(rv) {
                *o += b;
            }
        }
        let rg = self.any_grad(&[a, row]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), rg, Op::AddRow(a, row)))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| gelu(x)).collect();
        let rg = self.requires_grad(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), rg, Op::Gelu(a))
    }

    // ----- linear algebra -----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (p, q, q2, r) = match (sa, sb) {
            ([p, q], [q2, r]) => (*p, *q, *q2, *r),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        if q != q2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let mut out = vec![0.0; p * r];
        matmul_nn(self.value(a), self.value(b), &mut out, p, q, r);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(vec![p, r], Cow::Owned(out), rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = match self.shape(a) {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("transpose", s, &[])),
        };
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(vec![c, r], Cow::Owned(out), rg, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape("reshape", self.shape(a), &shape));
        }
        let out = self.value(a).to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(shape, Cow::Owned(out), rg, Op::Reshape(a)))
    }

    // ----- normalisation ------------------------------------------------

    /// Softmax over the last axis (the whole vector for 1-D input).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(a));
        if c == 0 || r == 0 {
            return Err(Error::shape("softmax", self.shape(a), &[]));
        }
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_into(&v[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let rg = self.requires_grad(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), rg, Op::Softmax(a)))
    }

    /// Row softmax of a square score matrix where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let n = match self.shape(a) {
            [r, c] if r == c => *r,
            s => return Err(Error::shape("causal_softmax", s, &[])),
        };
        let v = self.value(a);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            softmax_into(&v[i * n..i * n + i + 1], &mut out[i * n..i * n + i + 1]);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(vec![n, n], Cow::Owned(out), rg, Op::CausalSoftmax(a)))
    }

    /// Per-row layer normalisation with affine `gamma`, `beta` of length `c`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            Cow::Owned(out),
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    // ----- indexing -----------------------------------------------------

    /// Selects rows of a `[V×d]` table, producing `[ids.len()×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = match self.shape(table) {
            [v, d] => (*v, *d),
            s => return Err(Error::shape("gather", s, &[])),
        };
        if ids.is_empty() {
            return Err(Error::contract("gather: empty index list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::contract(format!("gather: row {bad} out of range for table of {v} rows")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(vec![ids.len(), d], Cow::Owned(out), rg, Op::Gather(table, ids.to_vec())))
    }

    /// Arithmetic mean over rows: `[r×c] → [c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(a));
        let v = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(&v[i * c..(i + 1) * c]) {
                *o += x;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.requires_grad(a);
        Ok(self.push(vec![c], Cow::Owned(out), rg, Op::MeanRows(a)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(a));
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", self.shape(a), &[start, len]));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(vec![r, len], Cow::Owned(out), rg, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(a));
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", self.shape(a), &[start, len]));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(vec![len, c], Cow::Owned(out), rg, Op::SliceRows(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat_cols: no inputs"))?;
        let (r, _) = rows_cols(self.shape(first));
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = rows_cols(self.shape(p));
            if pr != r {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for i in 0..r {
                out[i * total + offset..i * total + offset + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = self.any_grad(parts);
        Ok(self.push(vec![r, total], Cow::Owned(out), rg, Op::ConcatCols(parts.to_vec())))
    }

    // ----- reductions and losses ----------------------------------------

    /// Sum of one-element values.
    pub fn sum(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::contract("sum: no inputs"));
        }
        let mut total = 0.0;
        for &s in scalars {
            if self.value(s).len() != 1 {
                return Err(Error::shape("sum", self.shape(s), &[1]));
            }
            total += self.scalar(s);
        }
        let rg = self.any_grad(scalars);
        Ok(self.push(vec![1], Cow::Owned(vec![total]), rg, Op::Sum(scalars.to_vec())))
    }

    pub fn mean(&mut self, scalars: &[Var]) -> Result<Var> {
        let s = self.sum(scalars)?;
        Ok(self.scale(s, 1.0 / scalars.len() as f64))
    }

    /// `(1/d) Σ (p_i − q_i)²`
    pub fn mse_distance(&mut self, p: Var, q: Var) -> Result<Var> {
        if self.value(p).len() != self.value(q).len() {
            return Err(Error::shape("mse_distance", self.shape(p), self.shape(q)));
        }
        let d = self.value(p).len() as f64;
        let mut acc = 0.0;
        for (&a, &b) in self.value(p).iter().zip(self.value(q)) {
            acc += (a - b) * (a - b);
        }
        let rg = self.any_grad(&[p, q]);
        Ok(self.push(vec![1], Cow::Owned(vec![acc / d]), rg, Op::Mse(p, q)))
    }

    /// `−Σ softmax(p)_i · log softmax(q)_i`
    pub fn cross_entropy_distance(&mut self, p: Var, q: Var) -> Result<Var> {
        let n = self.value(p).len();
        if n == 0 || n != self.value(q).len() {
            return Err(Error::shape("cross_entropy_distance", self.shape(p), self.shape(q)));
        }
        let mut sp = vec![0.0; n];
        let mut lq = vec![0.0; n];
        softmax_into(self.value(p), &mut sp);
        log_softmax_into(self.value(q), &mut lq);
        let loss = -sp.iter().zip(&lq).map(|(a, b)| a * b).sum::<f64>();
        let rg = self.any_grad(&[p, q]);
        Ok(self.push(vec![1], Cow::Owned(vec![loss]), rg, Op::CrossEntropy { p, q, sp, lq }))
    }

    /// Mean token negative log-likelihood of `targets` under row-wise logits.
    pub fn nll(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(logits));
        if targets.len() != r {
            return Err(Error::shape("nll", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::contract(format!("nll: target {bad} out of range for {c} classes")));
        }
        let v = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut lrow = vec![0.0; c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            log_softmax_into(row, &mut lrow);
            loss -= lrow[targets[i]];
            softmax_into(row, &mut probs[i * c..(i + 1) * c]);
        }
        loss /= r as f64;
        let rg = self.requires_grad(logits);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![loss]),
            rg,
            Op::Nll {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    // ----- reverse pass -------------------------------------------------

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&contrib) {
                    *a += b;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    ///
    /// Leaf gradients accumulate across calls; intermediate gradients are
    /// recomputed each time.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        for node in self.nodes.iter_mut().filter(|n| !matches!(n.op, Op::Leaf)) {
            node.grad = None;
        }
        self.accumulate(loss, vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // The op is moved out so its cached buffers can be read while
        // parent gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(*a, g.iter().map(|x| x * s).collect());
            }
            Op::AddRow(a, row) => {
                let c = self.value(*row).len();
                let mut gr = vec![0.0; c];
                for chunk in g.chunks(c) {
                    for (o, x) in gr.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
                self.accumulate(*a, g.to_vec());
                self.accumulate(*row, gr);
            }
            Op::MatMul(a, b) => {
                let (p, q) = rows_cols(self.shape(*a));
                let r = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; p * q];
                    matmul_nt(g, self.value(*b), &mut ga, p, r, q);
                    self.accumulate(*a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; q * r];
                    matmul_tn(self.value(*a), g, &mut gb, p, q, r);
                    self.accumulate(*b, gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = rows_cols(self.shape(*a));
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Reshape(a) => self.accumulate(*a, g.to_vec()),
            Op::Gelu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(gv, &x)| gv * gelu_grad(x))
                    .collect();
                self.accumulate(*a, ga);
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                let y = &self.nodes[i].value;
                let (r, c) = rows_cols(&self.nodes[i].shape);
                let mut ga = vec![0.0; r * c];
                for row in 0..r {
                    let ys = &y[row * c..(row + 1) * c];
                    let gs = &g[row * c..(row + 1) * c];
                    let dotp: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[row * c + j] = ys[j] * (gs[j] - dotp);
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = rows_cols(self.shape(*x));
                let gam = self.value(*gamma).to_vec();
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut gx = vec![0.0; r * c];
                for row in 0..r {
                    let gs = &g[row * c..(row + 1) * c];
                    let hs = &xhat[row * c..(row + 1) * c];
                    let mut sum_gh = 0.0;
                    let mut sum_ghx = 0.0;
                    for j in 0..c {
                        gg[j] += gs[j] * hs[j];
                        gb[j] += gs[j];
                        let gh = gs[j] * gam[j];
                        sum_gh += gh;
                        sum_ghx += gh * hs[j];
                    }
                    let scale = rstd[row] / c as f64;
                    for j in 0..c {
                        let gh = gs[j] * gam[j];
                        gx[row * c + j] = scale * (c as f64 * gh - sum_gh - hs[j] * sum_ghx);
                    }
                }
                self.accumulate(*x, gx);
                self.accumulate(*gamma, gg);
                self.accumulate(*beta, gb);
            }
            Op::Gather(table, ids) => {
                let d = self.shape(*table)[1];
                self.accumulate_with(*table, |gt| {
                    for (k, &id) in ids.iter().enumerate() {
                        for (o, x) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[k * d..(k + 1) * d]) {
                            *o += x;
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let (r, c) = rows_cols(self.shape(*a));
                let inv = 1.0 / r as f64;
                let mut ga = Vec::with_capacity(r * c);
                for _ in 0..r {
                    ga.extend(g.iter().map(|x| x * inv));
                }
                self.accumulate(*a, ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = rows_cols(self.shape(*a));
                let len = self.nodes[i].shape[1];
                let start = *start;
                self.accumulate_with(*a, |ga| {
                    for row in 0..r {
                        for j in 0..len {
                            ga[row * c + start + j] += g[row * len + j];
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let (_, c) = rows_cols(self.shape(*a));
                let start = *start;
                self.accumulate_with(*a, |ga| {
                    for (o, x) in ga[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *o += x;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[i].shape[1];
                let r = self.nodes[i].shape[0];
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = rows_cols(self.shape(p));
                    let mut gp = Vec::with_capacity(r * w);
                    for row in 0..r {
                        gp.extend_from_slice(&g[row * total + offset..row * total + offset + w]);
                    }
                    self.accumulate(p, gp);
                    offset += w;
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    self.accumulate(p, vec![g[0]]);
                }
            }
            Op::Mse(p, q) => {
                let d = self.value(*p).len() as f64;
                let diff: Vec<f64> = self
                    .value(*p)
                    .iter()
                    .zip(self.value(*q))
                    .map(|(a, b)| 2.0 * (a - b) / d * g[0])
                    .collect();
                self.accumulate(*q, diff.iter().map(|x| -x).collect());
                self.accumulate(*p, diff);
            }
            Op::CrossEntropy { p, q, sp, lq } => {
                let loss = self.nodes[i].value[0];
                // d/dq_j = softmax(q)_j − softmax(p)_j
                let gq: Vec<f64> = lq.iter().zip(sp).map(|(l, s)| (l.exp() - s) * g[0]).collect();
                // d/dp_j = −softmax(p)_j (log softmax(q)_j + loss)
                let gp: Vec<f64> = sp.iter().zip(lq).map(|(s, l)| -s * (l + loss) * g[0]).collect();
                self.accumulate(*q, gq);
                self.accumulate(*p, gp);
            }
            Op::Nll {
                logits,
                targets,
                probs,
            } => {
                let (r, c) = rows_cols(self.shape(*logits));
                let inv = g[0] / r as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * inv).collect();
                for (row, &t) in targets.iter().enumerate() {
                    gl[row * c + t] -= inv;
                }
                self.accumulate(*logits, gl);
            }
        }
        self.nodes[i].op = op;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
