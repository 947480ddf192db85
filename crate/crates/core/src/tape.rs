//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation eagerly: values are available as soon
//! as a node is created, so control flow (such as the response branch of the
//! generator) can inspect them. [`Tape::backward`] walks the recorded nodes in
//! reverse and accumulates gradients into per-node buffers.
//!
//! Everything is row-major `f64`. Vectors are `1 x n` matrices.

use std::fmt;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self::new(1, cols, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{})", self.rows, self.cols)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Sqrt(Var),
    LogClamp(Var, f64),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Pick(Var, usize),
    Transpose(Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    Attend {
        query: Var,
        keys: Vec<Var>,
        values: Vec<Var>,
        scale: f64,
        weights: Vec<f64>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        scale: f64,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` did not contribute.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Takes ownership of the gradient for `v`, zero-filled to `len` when absent.
    pub fn take_or_zeros(&mut self, v: Var, len: usize) -> Vec<f64> {
        self.grads[v.0].take().unwrap_or_else(|| vec![0.0; len])
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Attention weights recorded by [`Tape::attend`] or [`Tape::causal_attention`].
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attend { weights, .. } | Op::CausalAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows, t.cols)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Tensor::zeros(rows, cols))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let av = &self.nodes[a.0].value.data;
        let bv = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip != 0.0 {
                    axpy(aip, &bv[p * n..(p + 1) * n], orow);
                }
            }
        }
        self.push(Tensor::new(m, n, out), Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::new(r, c, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (1, c), "add_row expects a 1 x cols bias");
        let bias = &self.nodes[b.0].value.data;
        let mut data = self.nodes[a.0].value.data.clone();
        for row in data.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(bias) {
                *x += y;
            }
        }
        self.push(Tensor::new(r, c, data), Op::AddRow(a, b))
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar expects a 1 x 1 factor");
        let k = self.nodes[s.0].value.data[0];
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].value.data.iter().map(|x| x * k).collect();
        self.push(Tensor::new(r, c, data), Op::MulScalar(a, s))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].value.data.iter().map(|&x| f(x)).collect();
        self.push(Tensor::new(r, c, data), op)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x + k, Op::AddConst(a))
    }

    /// `k - a`, elementwise.
    pub fn rsub_const(&mut self, k: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    /// `ln(max(a, eps))`; clamped entries pass no gradient.
    pub fn log_clamp(&mut self, a: Var, eps: f64) -> Var {
        self.map(a, |x| x.max(eps).ln(), Op::LogClamp(a, eps))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = self.nodes[a.0].value.data.clone();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(Tensor::new(r, c, data), Op::Softmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, rows, "concat_cols row mismatch");
                self.shape(p).1
            })
            .sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.cols, cols, "stack_rows column mismatch");
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        self.push(Tensor::new(rows, cols, data), Op::StackRows(parts.to_vec()))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let data = self.nodes[a.0].value.row(r).to_vec();
        self.push(Tensor::row_vector(data), Op::Row(a, r))
    }

    /// Element `i` of a `1 x n` node, as `1 x 1`.
    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let v = self.nodes[a.0].value.data[i];
        self.push(Tensor::scalar(v), Op::Pick(a, i))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = &self.nodes[a.0].value.data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(Tensor::new(c, r, data), Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Sums `1 x 1` nodes in order.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        match parts {
            [] => self.constant(Tensor::scalar(0.0)),
            [only] => *only,
            _ => {
                let stacked = self.stack_rows(parts);
                self.sum(stacked)
            }
        }
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let cols = t.cols;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        self.push(
            Tensor::new(indices.len(), cols, data),
            Op::Gather(table, indices.to_vec()),
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let mut data = vec![0.0; t.cols];
        for r in 0..t.rows {
            for (x, y) in data.iter_mut().zip(t.row(r)) {
                *x += y;
            }
        }
        let n = t.rows as f64;
        for x in data.iter_mut() {
            *x /= n;
        }
        self.push(Tensor::row_vector(data), Op::MeanRows(a))
    }

    /// Single-query scaled dot-product attention over separate key/value rows.
    ///
    /// `keys` must be non-empty; all keys share the query width and all
    /// values share one width.
    pub fn attend(&mut self, query: Var, keys: &[Var], values: &[Var], scale: f64) -> Var {
        assert!(!keys.is_empty(), "attend needs at least one key");
        assert_eq!(keys.len(), values.len());
        let q = &self.nodes[query.0].value.data;
        let mut weights: Vec<f64> = keys
            .iter()
            .map(|k| scale * dot(q, &self.nodes[k.0].value.data))
            .collect();
        softmax_in_place(&mut weights);
        let width = self.nodes[values[0].0].value.data.len();
        let mut out = vec![0.0; width];
        for (w, v) in weights.iter().zip(values) {
            axpy(*w, &self.nodes[v.0].value.data, &mut out);
        }
        self.push(
            Tensor::row_vector(out),
            Op::Attend {
                query,
                keys: keys.to_vec(),
                values: values.to_vec(),
                scale,
                weights,
            },
        )
    }

    /// Masked scaled dot-product attention: row `t` attends to rows `0..=t`.
    ///
    /// Row `t` of the output is computed from rows `0..=t` only, so it is
    /// bit-identical regardless of how many later rows exist.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Var {
        let (t_len, dk) = self.shape(q);
        assert_eq!(self.shape(k), (t_len, dk), "causal_attention key shape");
        let (tv, dv) = self.shape(v);
        assert_eq!(tv, t_len, "causal_attention value length");
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let mut weights = vec![0.0; t_len * t_len];
        let mut out = vec![0.0; t_len * dv];
        for t in 0..t_len {
            let wrow = &mut weights[t * t_len..t * t_len + t + 1];
            for (j, w) in wrow.iter_mut().enumerate() {
                *w = scale * dot(qv.row(t), kv.row(j));
            }
            softmax_in_place(wrow);
            let orow = &mut out[t * dv..(t + 1) * dv];
            for (j, w) in wrow.iter().enumerate() {
                axpy(*w, vv.row(j), orow);
            }
        }
        self.push(
            Tensor::new(t_len, dv, out),
            Op::CausalAttention {
                q,
                k,
                v,
                scale,
                weights,
            },
        )
    }

    /// Back-propagates from the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        macro_rules! acc {
            ($grads:expr, $v:expr) => {
                accumulator(&self.nodes, $grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                {
                    let ga = acc!(grads, *a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(grow, bv.row(p));
                        }
                    }
                }
                let gb = acc!(grads, *b);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av.data[i * k + p];
                        if aip != 0.0 {
                            axpy(aip, grow, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                axpy(1.0, g, acc!(grads, *a));
                axpy(1.0, g, acc!(grads, *b));
            }
            Op::Sub(a, b) => {
                axpy(1.0, g, acc!(grads, *a));
                axpy(-1.0, g, acc!(grads, *b));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                {
                    let ga = acc!(grads, *a);
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(&bv.data) {
                        *x += gi * y;
                    }
                }
                let gb = acc!(grads, *b);
                for ((x, gi), y) in gb.iter_mut().zip(g).zip(&av.data) {
                    *x += gi * y;
                }
            }
            Op::AddRow(a, b) => {
                axpy(1.0, g, acc!(grads, *a));
                let c = out.cols;
                let gb = acc!(grads, *b);
                for row in g.chunks(c) {
                    axpy(1.0, row, gb);
                }
            }
            Op::MulScalar(a, s) => {
                let k = val(*s).data[0];
                axpy(k, g, acc!(grads, *a));
                let gs = dot(g, &val(*a).data);
                acc!(grads, *s)[0] += gs;
            }
            Op::Scale(a, k) => axpy(*k, g, acc!(grads, *a)),
            Op::AddConst(a) => axpy(1.0, g, acc!(grads, *a)),
            Op::Tanh(a) => {
                let ga = acc!(grads, *a);
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *x += gi * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc!(grads, *a);
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *x += gi * y * (1.0 - y);
                }
            }
            Op::Abs(a) => {
                let av = val(*a);
                let ga = acc!(grads, *a);
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&av.data) {
                    if *y > 0.0 {
                        *x += gi;
                    } else if *y < 0.0 {
                        *x -= gi;
                    }
                }
            }
            Op::Sqrt(a) => {
                let ga = acc!(grads, *a);
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    if *y > 0.0 {
                        *x += gi / (2.0 * y);
                    }
                }
            }
            Op::LogClamp(a, eps) => {
                let av = val(*a);
                let ga = acc!(grads, *a);
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&av.data) {
                    if *y > *eps {
                        *x += gi / y;
                    }
                }
            }
            Op::Softmax(a) => {
                let c = out.cols;
                let ga = acc!(grads, *a);
                for ((grow, yrow), garow) in g.chunks(c).zip(out.data.chunks(c)).zip(ga.chunks_mut(c)) {
                    let s = dot(grow, yrow);
                    for ((x, gi), y) in garow.iter_mut().zip(grow).zip(yrow) {
                        *x += y * (gi - s);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    let gp = acc!(grads, p);
                    for r in 0..out.rows {
                        let src = &g[r * out.cols + offset..r * out.cols + offset + pc];
                        axpy(1.0, src, &mut gp[r * pc..(r + 1) * pc]);
                    }
                    offset += pc;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).data.len();
                    axpy(1.0, &g[offset..offset + n], acc!(grads, p));
                    offset += n;
                }
            }
            Op::Row(a, r) => {
                let c = out.cols;
                axpy(1.0, g, &mut acc!(grads, *a)[r * c..(r + 1) * c]);
            }
            Op::Pick(a, i) => acc!(grads, *a)[*i] += g[0],
            Op::Transpose(a) => {
                let (r, c) = (out.rows, out.cols);
                let ga = acc!(grads, *a);
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::Sum(a) => {
                let ga = acc!(grads, *a);
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::Gather(table, idx) => {
                let c = out.cols;
                let gt = acc!(grads, *table);
                for (r, &i) in idx.iter().enumerate() {
                    axpy(1.0, &g[r * c..(r + 1) * c], &mut gt[i * c..(i + 1) * c]);
                }
            }
            Op::MeanRows(a) => {
                let av = val(*a);
                let inv = 1.0 / av.rows as f64;
                let ga = acc!(grads, *a);
                for row in ga.chunks_mut(av.cols) {
                    axpy(inv, g, row);
                }
            }
            Op::Attend {
                query,
                keys,
                values,
                scale,
                weights,
            } => {
                // d weight_i = <g, v_i>; d score_i = w_i (dw_i - sum_j w_j dw_j)
                let dw: Vec<f64> = values.iter().map(|v| dot(g, &val(*v).data)).collect();
                let mean = dot(weights, &dw);
                let qv = &val(*query).data;
                for (i, (&k, &v)) in keys.iter().zip(values).enumerate() {
                    axpy(weights[i], g, acc!(grads, v));
                    let ds = weights[i] * (dw[i] - mean) * scale;
                    axpy(ds, &val(k).data, acc!(grads, *query));
                    axpy(ds, qv, acc!(grads, k));
                }
            }
            Op::CausalAttention {
                q,
                k,
                v,
                scale,
                weights,
            } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let t_len = qv.rows;
                let (dk, dv) = (qv.cols, vv.cols);
                let mut dq = vec![0.0; t_len * dk];
                let mut dkk = vec![0.0; t_len * dk];
                let mut dvv = vec![0.0; t_len * dv];
                for t in 0..t_len {
                    let grow = &g[t * dv..(t + 1) * dv];
                    let wrow = &weights[t * t_len..t * t_len + t + 1];
                    let dw: Vec<f64> = (0..=t).map(|j| dot(grow, vv.row(j))).collect();
                    let mean = dot(wrow, &dw);
                    for j in 0..=t {
                        axpy(wrow[j], grow, &mut dvv[j * dv..(j + 1) * dv]);
                        let ds = wrow[j] * (dw[j] - mean) * scale;
                        axpy(ds, kv.row(j), &mut dq[t * dk..(t + 1) * dk]);
                        axpy(ds, qv.row(t), &mut dkk[j * dk..(j + 1) * dk]);
                    }
                }
                axpy(1.0, &dq, acc!(grads, *q));
                axpy(1.0, &dkk, acc!(grads, *k));
                axpy(1.0, &dvv, acc!(grads, *v));
            }
        }
    }
}

fn accumulator<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
    let len = nodes[v.0].value.data.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
