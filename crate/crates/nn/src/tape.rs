//! Operation tape and reverse pass.
//!
//! Every primitive appends a node holding its forward value and the indices of
//! its inputs. Nodes are only ever appended, so index order is a topological
//! order and the reverse pass is a single backwards sweep.

use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_at, matmul_bt, matmul_raw, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Softmax(usize, usize),
    LogSoftmax(usize),
    Dropout(usize, Vec<f64>),
    Concat(Vec<usize>, usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    AbsSum(usize),
    Log(usize),
    Exp(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    GatherCols(usize, Vec<usize>),
    Rows(usize, Vec<usize>),
    Reshape(usize),
    OuterSum(usize, usize),
    EdgeAttention {
        h: usize,
        src: usize,
        dst: usize,
        nbr: Vec<Vec<usize>>,
        alpha: Vec<Vec<f64>>,
        slope: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    match t.shape.len() {
        1 => (1, t.shape[0]),
        2 => (t.shape[0], t.shape[1]),
        _ => (t.len() / t.cols().max(1), t.cols()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that collects a gradient, retrievable from [`Gradients::wrt`].
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Loads a trainable parameter; its gradient is accumulated into the
    /// store by [`Gradients::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (dims2(ta), dims2(tb));
        if k != k2 || tb.shape.len() != 2 {
            return shape_err("matmul", &ta.shape, &tb.shape);
        }
        let out = Tensor {
            shape: vec![m, n],
            values: matmul_raw(&ta.values, &tb.values, m, k, n),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return shape_err(op, &ta.shape, &tb.shape);
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let values = ta.values.iter().zip(&tb.values).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor {
            shape: ta.shape.clone(),
            values,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("minimum", a, b, f64::min, Op::Minimum(a.0, b.0))
    }

    /// `a[m,n] + bias[n]`, bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (m, n) = dims2(ta);
        if tb.len() != n {
            return shape_err("add_bias", &ta.shape, &tb.shape);
        }
        let mut values = ta.values.clone();
        for r in 0..m {
            for (v, b) in values[r * n..(r + 1) * n].iter_mut().zip(&tb.values) {
                *v += b;
            }
        }
        let out = Tensor {
            shape: ta.shape.clone(),
            values,
        };
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(a.0, bias.0), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out = Tensor {
            shape: ta.shape.clone(),
            values: ta.values.iter().map(|x| f(*x)).collect(),
        };
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a.0, slope))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a.0, lo, hi))
    }

    /// Softmax of a matrix along `axis` (0: down columns, 1: along rows).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = dims2(ta);
        if axis > 1 {
            return shape_err("softmax", &ta.shape, &[axis]);
        }
        let mut values = ta.values.clone();
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
        for o in 0..outer {
            let idx = |i: usize| o * stride_o + i * stride_i;
            let mx = (0..inner).map(|i| values[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..inner {
                let e = (values[idx(i)] - mx).exp();
                values[idx(i)] = e;
                z += e;
            }
            for i in 0..inner {
                values[idx(i)] /= z;
            }
        }
        let out = Tensor {
            shape: ta.shape.clone(),
            values,
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a.0, axis), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = dims2(ta);
        let mut values = ta.values.clone();
        for r in 0..m {
            let row = &mut values[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let out = Tensor {
            shape: ta.shape.clone(),
            values,
        };
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a.0), rg)
    }

    /// Inverted dropout: with `train` false (or zero rate) this is the
    /// identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let ta = self.value(a);
        let mask: Vec<f64> = (0..ta.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = Tensor {
            shape: ta.shape.clone(),
            values: ta.values.iter().zip(&mask).map(|(x, m)| x * m).collect(),
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout(a.0, mask), rg))
    }

    /// Concatenates matrices along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Contract("concat of nothing".into()))?;
        let (m0, n0) = dims2(self.value(*first));
        let mut values = Vec::new();
        let shape = match axis {
            0 => {
                let mut rows = 0;
                for p in parts {
                    let t = self.value(*p);
                    let (m, n) = dims2(t);
                    if n != n0 {
                        return shape_err("concat", &self.value(*first).shape, &t.shape);
                    }
                    rows += m;
                    values.extend_from_slice(&t.values);
                }
                vec![rows, n0]
            }
            1 => {
                let mut cols = 0;
                for p in parts {
                    let t = self.value(*p);
                    let (m, n) = dims2(t);
                    if m != m0 {
                        return shape_err("concat", &self.value(*first).shape, &t.shape);
                    }
                    cols += n;
                }
                values.resize(m0 * cols, 0.0);
                let mut off = 0;
                for p in parts {
                    let t = self.value(*p);
                    let (_, n) = dims2(t);
                    for r in 0..m0 {
                        values[r * cols + off..r * cols + off + n].copy_from_slice(&t.values[r * n..(r + 1) * n]);
                    }
                    off += n;
                }
                vec![m0, cols]
            }
            _ => return shape_err("concat", &self.value(*first).shape, &[axis]),
        };
        let rg = parts.iter().any(|p| self.rg(*p));
        let out = Tensor { shape, values };
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect(), axis), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.values.iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    pub fn abs_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values.iter().map(|x| x.abs()).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::AbsSum(a.0), rg)
    }

    /// Sum of a matrix along `axis`; the reduced axis is kept with size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        let out = match axis {
            0 => {
                let mut v = vec![0.0; n];
                for r in 0..m {
                    for c in 0..n {
                        v[c] += t.values[r * n + c];
                    }
                }
                Tensor { shape: vec![1, n], values: v }
            }
            1 => Tensor {
                shape: vec![m, 1],
                values: (0..m).map(|r| t.values[r * n..(r + 1) * n].iter().sum()).collect(),
            },
            _ => return shape_err("sum_axis", &t.shape, &[axis]),
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::SumAxis(a.0, axis), rg))
    }

    /// Picks `a[r, idx[r]]` for every row, giving an `m × 1` column.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        if idx.len() != m || idx.iter().any(|&c| c >= n) {
            return shape_err("gather_cols", &t.shape, &[idx.len()]);
        }
        let values = idx.iter().enumerate().map(|(r, &c)| t.values[r * n + c]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape: vec![m, 1], values }, Op::GatherCols(a.0, idx.to_vec()), rg))
    }

    /// Selects rows `idx` of a matrix (repeats allowed).
    pub fn rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        if idx.iter().any(|&r| r >= m) {
            return shape_err("rows", &t.shape, idx);
        }
        let mut values = Vec::with_capacity(idx.len() * n);
        for &r in idx {
            values.extend_from_slice(&t.values[r * n..(r + 1) * n]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape: vec![idx.len(), n], values }, Op::Rows(a.0, idx.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return shape_err("reshape", &t.shape, shape);
        }
        let out = Tensor { shape: shape.to_vec(), values: t.values.clone() };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a.0), rg))
    }

    /// `out[i, j] = a[i] + b[j]` for vectors (or single-column matrices).
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, n) = (ta.len(), tb.len());
        let mut values = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                values.push(ta.values[i] + tb.values[j]);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor { shape: vec![m, n], values }, Op::OuterSum(a.0, b.0), rg)
    }

    /// Neighborhood attention: for node `i` with neighbor list `nbr[i]`,
    /// `e_ij = leaky_relu(src_i + dst_j)`, `α_i· = softmax_j(e_i·)` and
    /// `out_i = Σ_j α_ij h_j`. `src` and `dst` are `M × 1` score columns.
    pub fn edge_attention(&mut self, h: Var, src: Var, dst: Var, nbr: &[Vec<usize>], slope: f64) -> Result<Var> {
        let th = self.value(h);
        let (m, d) = dims2(th);
        let (ts, td) = (self.value(src), self.value(dst));
        if ts.len() != m || td.len() != m || nbr.len() != m {
            return shape_err("edge_attention", &th.shape, &ts.shape);
        }
        if nbr.iter().any(|l| l.is_empty() || l.iter().any(|&j| j >= m)) {
            return Err(NnError::Contract("edge_attention: every node needs an in-range neighbor".into()));
        }
        let alpha = attention_weights(&ts.values, &td.values, nbr, slope);
        let mut values = vec![0.0; m * d];
        for i in 0..m {
            let orow = &mut values[i * d..(i + 1) * d];
            for (&j, a) in nbr[i].iter().zip(&alpha[i]) {
                for (o, hv) in orow.iter_mut().zip(&th.values[j * d..(j + 1) * d]) {
                    *o += a * hv;
                }
            }
        }
        let rg = self.rg(h) || self.rg(src) || self.rg(dst);
        let op = Op::EdgeAttention {
            h: h.0,
            src: src.0,
            dst: dst.0,
            nbr: nbr.to_vec(),
            alpha,
            slope,
        };
        Ok(self.push(Tensor { shape: vec![m, d], values }, op, rg))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        if !nodes[loss.0].value.is_scalar() {
            return Err(NnError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], i: usize, g: impl FnOnce(&mut [f64])) {
            if !nodes[i].requires_grad {
                return;
            }
            let slot = grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]);
            g(slot);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                    let ((m, k), (_, n)) = (dims2(ta), dims2(tb));
                    if nodes[*a].requires_grad {
                        let da = matmul_bt(&g, &tb.values, m, n, k);
                        acc(&mut grads, &nodes, *a, |s| s.iter_mut().zip(&da).for_each(|(x, d)| *x += d));
                    }
                    if nodes[*b].requires_grad {
                        let db = matmul_at(&ta.values, &g, m, k, n);
                        acc(&mut grads, &nodes, *b, |s| s.iter_mut().zip(&db).for_each(|(x, d)| *x += d));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().zip(&g).for_each(|(x, d)| *x += d));
                    acc(&mut grads, &nodes, *b, |s| s.iter_mut().zip(&g).for_each(|(x, d)| *x += d));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().zip(&g).for_each(|(x, d)| *x += d));
                    acc(&mut grads, &nodes, *b, |s| s.iter_mut().zip(&g).for_each(|(x, d)| *x -= d));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value.values, &nodes[*b].value.values);
                    acc(&mut grads, &nodes, *a, |s| {
                        for ((x, d), y) in s.iter_mut().zip(&g).zip(vb) {
                            *x += d * y;
                        }
                    });
                    acc(&mut grads, &nodes, *b, |s| {
                        for ((x, d), y) in s.iter_mut().zip(&g).zip(va) {
                            *x += d * y;
                        }
                    });
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (&nodes[*a].value.values, &nodes[*b].value.values);
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            if va[k] <= vb[k] {
                                s[k] += g[k];
                            }
                        }
                    });
                    acc(&mut grads, &nodes, *b, |s| {
                        for k in 0..s.len() {
                            if va[k] > vb[k] {
                                s[k] += g[k];
                            }
                        }
                    });
                }
                Op::AddBias(a, b) => {
                    let n = nodes[*b].value.len();
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().zip(&g).for_each(|(x, d)| *x += d));
                    acc(&mut grads, &nodes, *b, |s| {
                        for (k, d) in g.iter().enumerate() {
                            s[k % n] += d;
                        }
                    });
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().zip(&g).for_each(|(x, d)| *x += c * d));
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().zip(&g).for_each(|(x, d)| *x += d));
                }
                Op::Relu(a) => {
                    let va = &nodes[*a].value.values;
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            if va[k] > 0.0 {
                                s[k] += g[k];
                            }
                        }
                    });
                }
                Op::LeakyRelu(a, slope) => {
                    let va = &nodes[*a].value.values;
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            s[k] += if va[k] > 0.0 { g[k] } else { slope * g[k] };
                        }
                    });
                }
                Op::Log(a) => {
                    let va = &nodes[*a].value.values;
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            s[k] += g[k] / va[k];
                        }
                    });
                }
                Op::Exp(a) => {
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            s[k] += g[k] * out.values[k];
                        }
                    });
                }
                Op::Square(a) => {
                    let va = &nodes[*a].value.values;
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            s[k] += 2.0 * va[k] * g[k];
                        }
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let va = &nodes[*a].value.values;
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            if va[k] >= *lo && va[k] <= *hi {
                                s[k] += g[k];
                            }
                        }
                    });
                }
                Op::Softmax(a, axis) => {
                    let (m, n) = dims2(out);
                    let y = &out.values;
                    let mut dx = vec![0.0; y.len()];
                    let (outer, inner, so, si) = if *axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
                    for o in 0..outer {
                        let dot: f64 = (0..inner).map(|i| g[o * so + i * si] * y[o * so + i * si]).sum();
                        for i in 0..inner {
                            let k = o * so + i * si;
                            dx[k] = y[k] * (g[k] - dot);
                        }
                    }
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().zip(&dx).for_each(|(x, d)| *x += d));
                }
                Op::LogSoftmax(a) => {
                    let (m, n) = dims2(out);
                    acc(&mut grads, &nodes, *a, |s| {
                        for r in 0..m {
                            let gs: f64 = g[r * n..(r + 1) * n].iter().sum();
                            for c in 0..n {
                                let k = r * n + c;
                                s[k] += g[k] - out.values[k].exp() * gs;
                            }
                        }
                    });
                }
                Op::Dropout(a, mask) => {
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            s[k] += g[k] * mask[k];
                        }
                    });
                }
                Op::Concat(parts, axis) => {
                    let (_, cols) = dims2(out);
                    let mut off = 0;
                    for &p in parts {
                        let (m, n) = dims2(&nodes[p].value);
                        if *axis == 0 {
                            let seg = &g[off..off + m * n];
                            acc(&mut grads, &nodes, p, |s| s.iter_mut().zip(seg).for_each(|(x, d)| *x += d));
                            off += m * n;
                        } else {
                            acc(&mut grads, &nodes, p, |s| {
                                for r in 0..m {
                                    for c in 0..n {
                                        s[r * n + c] += g[r * cols + off + c];
                                    }
                                }
                            });
                            off += n;
                        }
                    }
                }
                Op::Sum(a) => {
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().for_each(|x| *x += g[0]));
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.len() as f64;
                    acc(&mut grads, &nodes, *a, |s| s.iter_mut().for_each(|x| *x += g[0] / n));
                }
                Op::AbsSum(a) => {
                    let va = &nodes[*a].value.values;
                    acc(&mut grads, &nodes, *a, |s| {
                        for k in 0..s.len() {
                            s[k] += g[0] * va[k].signum() * if va[k] == 0.0 { 0.0 } else { 1.0 };
                        }
                    });
                }
                Op::SumAxis(a, axis) => {
                    let (m, n) = dims2(&nodes[*a].value);
                    acc(&mut grads, &nodes, *a, |s| {
                        for r in 0..m {
                            for c in 0..n {
                                s[r * n + c] += if *axis == 0 { g[c] } else { g[r] };
                            }
                        }
                    });
                }
                Op::GatherCols(a, idx) => {
                    let (_, n) = dims2(&nodes[*a].value);
                    acc(&mut grads, &nodes, *a, |s| {
                        for (r, &c) in idx.iter().enumerate() {
                            s[r * n + c] += g[r];
                        }
                    });
                }
                Op::Rows(a, idx) => {
                    let (_, n) = dims2(&nodes[*a].value);
                    acc(&mut grads, &nodes, *a, |s| {
                        for (k, &r) in idx.iter().enumerate() {
                            for c in 0..n {
                                s[r * n + c] += g[k * n + c];
                            }
                        }
                    });
                }
                Op::EdgeAttention {
                    h,
                    src,
                    dst,
                    nbr,
                    alpha,
                    slope,
                } => {
                    let th = &nodes[*h].value;
                    let (m, d) = dims2(th);
                    let (vs, vd) = (&nodes[*src].value.values, &nodes[*dst].value.values);
                    let mut dh = vec![0.0; m * d];
                    let mut ds = vec![0.0; m];
                    let mut dd = vec![0.0; m];
                    for i in 0..m {
                        let gi = &g[i * d..(i + 1) * d];
                        let da: Vec<f64> = nbr[i]
                            .iter()
                            .map(|&j| gi.iter().zip(&th.values[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum())
                            .collect();
                        let dot: f64 = da.iter().zip(&alpha[i]).map(|(x, a)| x * a).sum();
                        for (k, &j) in nbr[i].iter().enumerate() {
                            let a = alpha[i][k];
                            for (o, gv) in dh[j * d..(j + 1) * d].iter_mut().zip(gi) {
                                *o += a * gv;
                            }
                            let de = a * (da[k] - dot);
                            let dz = if vs[i] + vd[j] > 0.0 { de } else { slope * de };
                            ds[i] += dz;
                            dd[j] += dz;
                        }
                    }
                    acc(&mut grads, &nodes, *h, |s| s.iter_mut().zip(&dh).for_each(|(x, v)| *x += v));
                    acc(&mut grads, &nodes, *src, |s| s.iter_mut().zip(&ds).for_each(|(x, v)| *x += v));
                    acc(&mut grads, &nodes, *dst, |s| s.iter_mut().zip(&dd).for_each(|(x, v)| *x += v));
                }
                Op::OuterSum(a, b) => {
                    let (m, n) = (nodes[*a].value.len(), nodes[*b].value.len());
                    acc(&mut grads, &nodes, *a, |s| {
                        for i in 0..m {
                            s[i] += g[i * n..(i + 1) * n].iter().sum::<f64>();
                        }
                    });
                    acc(&mut grads, &nodes, *b, |s| {
                        for i in 0..m {
                            for j in 0..n {
                                s[j] += g[i * n + j];
                            }
                        }
                    });
                }
            }
        }

        let mut params = Vec::new();
        let mut leaves = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            match node.op {
                Op::Param(id) => {
                    if let Some(g) = grads[i].take() {
                        params.push((id, g));
                    }
                }
                Op::Leaf if node.requires_grad => {
                    leaves.push((i, grads[i].take()));
                }
                _ => {}
            }
        }
        Ok(Gradients { params, leaves })
    }
}

/// Attention coefficients used by [`Tape::edge_attention`], one row per node
/// in neighbor-list order.
pub fn attention_weights(src: &[f64], dst: &[f64], nbr: &[Vec<usize>], slope: f64) -> Vec<Vec<f64>> {
    nbr.iter()
        .enumerate()
        .map(|(i, list)| {
            let e: Vec<f64> = list
                .iter()
                .map(|&j| {
                    let z = src[i] + dst[j];
                    if z > 0.0 {
                        z
                    } else {
                        slope * z
                    }
                })
                .collect();
            let mx = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            ex.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<(ParamId, Vec<f64>)>,
    leaves: Vec<(usize, Option<Vec<f64>>)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::var`]; zero if the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Option<Vec<f64>> {
        self.leaves.iter().find(|(i, _)| *i == v.0).map(|(_, g)| g.clone().unwrap_or_default())
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            store.add_grad(*id, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 1).unwrap();
        for v in &tape.value(y).values {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[-1.0, 2.0]));
        let r = tape.relu(x);
        let l = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(r).values, vec![0.0, 2.0]);
        assert_eq!(tape.value(l).values, vec![-0.2, 2.0]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::new();
        let x = tape.var(t(&[3], &[1.0, -2.0, 0.5]));
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().wrt(x).unwrap(), vec![1.0; 3]);

        let mut tape = Tape::new();
        let x = tape.var(t(&[3], &[1.0, -2.0, 0.5]));
        let xx = tape.mul(x, x).unwrap();
        let s = tape.sum(xx);
        assert_eq!(tape.backward(s).unwrap().wrt(x).unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.var(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NnError::Contract(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(NnError::Shape { op, a, b }) => {
                assert_eq!(op, "matmul");
                assert_eq!(a, vec![2, 3]);
                assert_eq!(b, vec![2, 3]);
            }
            other => panic!("{other:?}"),
        }
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).is_err());
        let e = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.add_bias(a, e).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[100_000], 1.0));
        let rate = 0.3;
        let y = tape.dropout(x, rate, true, &mut rng).unwrap();
        let v = &tape.value(y).values;
        let zeros = v.iter().filter(|x| **x == 0.0).count() as f64 / v.len() as f64;
        assert!((zeros - rate).abs() <= 0.02);
        assert!(v.iter().all(|x| *x == 0.0 || (*x - 1.0 / 0.7).abs() < 1e-12));
        let z = tape.dropout(x, rate, false, &mut rng).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn concat_and_rows() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).values, vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let d = tape.concat(&[a, a], 0).unwrap();
        assert_eq!(tape.shape(d), &[4, 2]);
        let r = tape.rows(a, &[1, 0, 1]).unwrap();
        assert_eq!(tape.value(r).values, vec![3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
    }

    /// Central differences on every input element of `f`.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&mut Tape, Var) -> Var) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|k| {
                let eval = |d: f64| {
                    let mut xp = x.clone();
                    xp.values[k] += d;
                    let mut tape = Tape::new();
                    let v = tape.constant(xp);
                    let out = f(&mut tape, v);
                    tape.value(out).item()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    fn check(x: Tensor, f: &dyn Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let v = tape.var(x.clone());
        let out = f(&mut tape, v);
        let g = tape.backward(out).unwrap().wrt(v).unwrap();
        let n = numeric_grad(&x, f);
        for (a, b) in g.iter().zip(&n) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
            assert!(rel < 1e-5, "analytic {a} vs numeric {b}");
        }
    }

    fn input() -> Tensor {
        t(&[2, 3], &[0.3, -1.2, 0.7, 1.5, 0.2, -0.4])
    }

    #[test]
    fn elementwise_gradients() {
        let w = t(&[2, 3], &[0.1, 0.5, -0.3, 0.9, -0.7, 0.2]);
        check(input(), &|tp, x| {
            let y = tp.leaky_relu(x, 0.2);
            let z = tp.exp(y);
            let c = tp.constant(w.clone());
            let m = tp.mul(z, c).unwrap();
            let q = tp.square(m);
            tp.mean(q)
        });
        check(input(), &|tp, x| {
            let y = tp.clamp(x, -1.0, 1.0);
            let a = tp.abs_sum(y);
            let e = tp.exp(x);
            let l = tp.log(e);
            let s = tp.sum(l);
            let both = tp.concat(&[a, s], 0).unwrap();
            tp.sum(both)
        });
    }

    #[test]
    fn softmax_and_log_softmax_gradients() {
        let w = t(&[2, 3], &[0.1, 0.5, -0.3, 0.9, -0.7, 0.2]);
        for axis in [0, 1] {
            let w = w.clone();
            check(input(), &move |tp, x| {
                let s = tp.softmax(x, axis).unwrap();
                let c = tp.constant(w.clone());
                let m = tp.mul(s, c).unwrap();
                tp.sum(m)
            });
        }
        check(input(), &move |tp, x| {
            let s = tp.log_softmax(x);
            let g = tp.gather_cols(s, &[2, 0]).unwrap();
            tp.sum(g)
        });
    }

    #[test]
    fn structural_gradients() {
        check(input(), &|tp, x| {
            let col = tp.sum_axis(x, 0).unwrap();
            let row = tp.sum_axis(x, 1).unwrap();
            let o = tp.outer_sum(row, col);
            let sq = tp.square(o);
            let r = tp.rows(x, &[1, 1, 0]).unwrap();
            let rs = tp.reshape(r, &[9]).unwrap();
            let a = tp.sum(sq);
            let b = tp.abs_sum(rs);
            let both = tp.concat(&[a, b], 1).unwrap();
            tp.sum(both)
        });
        check(input(), &|tp, x| {
            let y = tp.scale(x, 0.5);
            let z = tp.add_scalar(y, 0.13);
            let w = tp.minimum(z, x).unwrap();
            let v = tp.sub(w, y).unwrap();
            let q = tp.square(v);
            tp.sum(q)
        });
    }

    #[test]
    fn edge_attention_gradients() {
        let nbr = vec![vec![0, 1], vec![1, 0, 2], vec![2, 1]];
        let h = t(&[3, 2], &[0.2, -0.1, 0.4, 0.3, -0.5, 0.6]);
        let w = t(&[3, 2], &[0.7, -0.2, 0.1, 0.9, -0.4, 0.3]);
        for which in 0..3 {
            let (nbr, h, w) = (nbr.clone(), h.clone(), w.clone());
            let input = if which == 0 { h.clone() } else { t(&[3, 1], &[0.3, -0.8, 0.5]) };
            check(input, &move |tp, x| {
                let other = |tp: &mut Tape, v: &[f64]| tp.constant(t(&[3, 1], v));
                let (hv, s, d) = match which {
                    0 => (x, other(tp, &[0.3, -0.8, 0.5]), other(tp, &[-0.2, 0.6, 0.1])),
                    1 => (tp.constant(h.clone()), x, other(tp, &[-0.2, 0.6, 0.1])),
                    _ => (tp.constant(h.clone()), other(tp, &[0.3, -0.8, 0.5]), x),
                };
                let o = tp.edge_attention(hv, s, d, &nbr, 0.2).unwrap();
                let c = tp.constant(w.clone());
                let m = tp.mul(o, c).unwrap();
                tp.sum(m)
            });
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let nbr = vec![vec![0], vec![1, 0, 2], vec![2, 1]];
        let a = attention_weights(&[3.0, -1.0, 0.2], &[0.5, 9.0, -4.0], &nbr, 0.2);
        assert_eq!(a[0], vec![1.0]);
        for row in &a {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let w = t(&[3, 2], &[0.2, -0.1, 0.4, 0.3, -0.5, 0.6]);
        let b = t(&[2], &[0.05, -0.02]);
        check(input(), &move |tp, x| {
            let wv = tp.constant(w.clone());
            let bv = tp.constant(b.clone());
            let h = tp.matmul(x, wv).unwrap();
            let h = tp.add_bias(h, bv).unwrap();
            let h = tp.relu(h);
            let q = tp.square(h);
            tp.sum(q)
        });
        let x = input();
        check(t(&[3, 2], &[0.2, -0.1, 0.4, 0.3, -0.5, 0.6]), &move |tp, w| {
            let xv = tp.constant(x.clone());
            let h = tp.matmul(xv, w).unwrap();
            let q = tp.square(h);
            tp.sum(q)
        });
    }
}
