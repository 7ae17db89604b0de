//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records the operations of one forward pass; [`Graph::backward`]
//! replays them in reverse and returns the gradient of every node. Only the
//! operations the segmentation network needs are provided.

use std::sync::Arc;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<const N: usize>(rows: &[[f64; N]]) -> Self {
        Self {
            rows: rows.len(),
            cols: N,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-wise argmax, ties to the lowest column.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // a is m x k (stored k x m when transposed), b is k x n (stored n x k when transposed)
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut c = Tensor::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        &a.data,
        false,
        &b.data,
        false,
        &mut c.data,
        0.0,
    );
    c
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Output-row -> input-rows membership for segment reductions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub members: Vec<Vec<usize>>,
    pub input_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Silu(Var),
    Gather(Var, Arc<Vec<usize>>),
    ConcatCols(Var, Var),
    NeighborSoftmax(Var, usize),
    GroupedAggregate {
        weights: Var,
        values: Var,
        k: usize,
        group: usize,
    },
    SegmentMean(Var, Arc<Segments>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable leaf; `slot` identifies it in [`Graph::param_grads`].
    pub fn param(&mut self, slot: usize, t: Tensor) -> Var {
        self.push(t, Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a + b` with `b` a single row broadcast over `a`'s rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((bv.rows, bv.cols), (1, av.cols), "add_row shape");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, x) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), bv.shape(), "sub shape");
        for (o, x) in out.data.iter_mut().zip(&bv.data) {
            *o -= x;
        }
        self.push(out, Op::Sub(a, b))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in &mut out.data {
            *v *= sigmoid(*v);
        }
        self.push(out, Op::Silu(a))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<usize>>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(index.len(), av.cols);
        for (r, &src) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(src));
        }
        self.push(out, Op::Gather(a, index))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows, bv.rows, "concat rows");
        let cols = av.cols + bv.cols;
        let mut out = Tensor::zeros(av.rows, cols);
        for r in 0..av.rows {
            out.data[r * cols..r * cols + av.cols].copy_from_slice(av.row(r));
            out.data[r * cols + av.cols..(r + 1) * cols].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Softmax over each block of `k` consecutive rows, per column.
    pub fn neighbor_softmax(&mut self, a: Var, k: usize) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.rows % k, 0, "neighbor_softmax rows");
        let cols = out.cols;
        for block in out.data.chunks_mut(k * cols) {
            for c in 0..cols {
                let max = (0..k)
                    .map(|j| block[j * cols + c])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..k {
                    let e = (block[j * cols + c] - max).exp();
                    block[j * cols + c] = e;
                    sum += e;
                }
                for j in 0..k {
                    block[j * cols + c] /= sum;
                }
            }
        }
        self.push(out, Op::NeighborSoftmax(a, k))
    }

    /// `out[i, ch] = sum_j weights[i*k + j, ch / group] * values[i*k + j, ch]`.
    pub fn grouped_aggregate(&mut self, weights: Var, values: Var, k: usize, group: usize) -> Var {
        let (w, v) = (self.value(weights), self.value(values));
        assert_eq!(w.rows, v.rows, "grouped_aggregate rows");
        assert_eq!(w.cols * group, v.cols, "grouped_aggregate groups");
        let n = v.rows / k;
        let (g, c) = (w.cols, v.cols);
        let mut out = Tensor::zeros(n, c);
        for i in 0..n {
            let o = &mut out.data[i * c..(i + 1) * c];
            for j in 0..k {
                let r = i * k + j;
                let wr = &w.data[r * g..(r + 1) * g];
                let vr = &v.data[r * c..(r + 1) * c];
                for ch in 0..c {
                    o[ch] += wr[ch / group] * vr[ch];
                }
            }
        }
        self.push(
            out,
            Op::GroupedAggregate {
                weights,
                values,
                k,
                group,
            },
        )
    }

    /// Mean of the member rows for every segment.
    pub fn segment_mean(&mut self, a: Var, segments: Arc<Segments>) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, segments.input_rows, "segment_mean rows");
        let mut out = Tensor::zeros(segments.members.len(), av.cols);
        for (s, members) in segments.members.iter().enumerate() {
            let inv = 1.0 / members.len() as f64;
            let o = out.row_mut(s);
            for &m in members {
                for (x, y) in o.iter_mut().zip(av.row(m)) {
                    *x += y;
                }
            }
            for x in o.iter_mut() {
                *x *= inv;
            }
        }
        self.push(out, Op::SegmentMean(a, segments))
    }

    /// Gradients of every node given the gradient `seed` on `output`.
    pub fn backward(&self, output: Var, seed: Tensor) -> Vec<Option<Tensor>> {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows, av.cols, bv.cols);
                    let ga = grads[a.0].get_or_insert_with(|| Tensor::zeros(m, k));
                    gemm(m, n, k, &g.data, false, &bv.data, true, &mut ga.data, 1.0);
                    let gb = grads[b.0].get_or_insert_with(|| Tensor::zeros(k, n));
                    gemm(k, m, n, &av.data, true, &g.data, false, &mut gb.data, 1.0);
                }
                Op::AddRow(a, b) => {
                    let cols = g.cols;
                    let gb = grads[b.0].get_or_insert_with(|| Tensor::zeros(1, cols));
                    for r in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.scale(-1.0);
                    accumulate(&mut grads[b.0], neg);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (dv, &xv) in d.data.iter_mut().zip(&x.data) {
                        let s = sigmoid(xv);
                        *dv *= s * (1.0 + xv * (1.0 - s));
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::Gather(a, index) => {
                    let av = self.value(*a);
                    let ga = grads[a.0].get_or_insert_with(|| Tensor::zeros(av.rows, av.cols));
                    let cols = av.cols;
                    for (r, &src) in index.iter().enumerate() {
                        let dst = &mut ga.data[src * cols..(src + 1) * cols];
                        for (x, y) in dst.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ac, bc) = (self.value(*a).cols, self.value(*b).cols);
                    let mut da = Tensor::zeros(g.rows, ac);
                    let mut db = Tensor::zeros(g.rows, bc);
                    for r in 0..g.rows {
                        let row = g.row(r);
                        da.row_mut(r).copy_from_slice(&row[..ac]);
                        db.row_mut(r).copy_from_slice(&row[ac..]);
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::NeighborSoftmax(a, k) => {
                    let y = &node.value;
                    let cols = y.cols;
                    let mut d = g;
                    for (yb, db) in y.data.chunks(k * cols).zip(d.data.chunks_mut(k * cols)) {
                        for c in 0..cols {
                            let dot: f64 =
                                (0..*k).map(|j| yb[j * cols + c] * db[j * cols + c]).sum();
                            for j in 0..*k {
                                db[j * cols + c] = yb[j * cols + c] * (db[j * cols + c] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::GroupedAggregate {
                    weights,
                    values,
                    k,
                    group,
                } => {
                    let (w, v) = (self.value(*weights), self.value(*values));
                    let (gcols, c) = (w.cols, v.cols);
                    let mut dw = Tensor::zeros(w.rows, gcols);
                    let mut dv = Tensor::zeros(v.rows, c);
                    for i in 0..g.rows {
                        let go = g.row(i);
                        for j in 0..*k {
                            let r = i * k + j;
                            let wr = &w.data[r * gcols..(r + 1) * gcols];
                            let vr = &v.data[r * c..(r + 1) * c];
                            let dwr = &mut dw.data[r * gcols..(r + 1) * gcols];
                            let dvr = &mut dv.data[r * c..(r + 1) * c];
                            for ch in 0..c {
                                dvr[ch] = wr[ch / group] * go[ch];
                                dwr[ch / group] += vr[ch] * go[ch];
                            }
                        }
                    }
                    accumulate(&mut grads[weights.0], dw);
                    accumulate(&mut grads[values.0], dv);
                }
                Op::SegmentMean(a, segments) => {
                    let av = self.value(*a);
                    let ga = grads[a.0].get_or_insert_with(|| Tensor::zeros(av.rows, av.cols));
                    let cols = av.cols;
                    for (s, members) in segments.members.iter().enumerate() {
                        let inv = 1.0 / members.len() as f64;
                        for &m in members {
                            let dst = &mut ga.data[m * cols..(m + 1) * cols];
                            for (x, y) in dst.iter_mut().zip(g.row(s)) {
                                *x += y * inv;
                            }
                        }
                    }
                }
            }
        }
        grads
    }

    /// Gradients for the parameter leaves, indexed by slot; untouched
    /// parameters get zero tensors of their shape.
    pub fn param_grads(&self, grads: &mut [Option<Tensor>], num_slots: usize) -> Vec<Tensor> {
        let mut out: Vec<Option<Tensor>> = vec![None; num_slots];
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(slot) = node.op {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows, node.value.cols));
                match &mut out[slot] {
                    Some(acc) => acc.add_assign(&g),
                    empty => *empty = Some(g),
                }
            }
        }
        out.into_iter()
            .map(|t| t.expect("every parameter slot is registered in the graph"))
            .collect()
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
