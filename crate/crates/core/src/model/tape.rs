//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Tape`] records every intermediate as a row-major matrix node.
//! Parameters are never copied onto the tape except where an op needs
//! their value as a node; their gradients are accumulated straight into a
//! [`Gradients`] buffer by [`Tape::backward`].

use super::params::{Gradients, ParamId, ParamStore};
use crate::memory::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Rows(ParamId, Vec<usize>),
    Linear {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
    },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    Row(Var, usize),
    RepeatRows(Var),
    SumCols(Var),
    MeanAll(Var),
    SoftmaxRows { x: Var, causal: bool },
    LogSumExp(Var),
    Pick(Var, usize),
    Scan(Box<ScanCache>),
}

#[derive(Debug, Clone)]
struct ScanCache {
    u: Var,
    delta: Var,
    b: Var,
    c: Var,
    a: Var,
    /// States after each step, `steps * (dim * n)`.
    states: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "constant shape mismatch");
        self.push(rows, cols, value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        self.push(t.rows, t.cols, t.data.clone(), Op::Param(id))
    }

    /// Gathers rows of a parameter matrix (embedding lookup).
    pub fn rows(&mut self, id: ParamId, idx: &[usize]) -> Var {
        let t = self.params.get(id);
        let mut value = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx {
            value.extend_from_slice(t.row(i));
        }
        self.push(idx.len(), t.cols, value, Op::Rows(id, idx.to_vec()))
    }

    /// `x W^T + b` for `x: n x in`, `W: out x in`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
        let (n, inp) = self.shape(x);
        let wt = self.params.get(w);
        assert_eq!(wt.cols, inp, "linear {}: input width {inp} vs weight {}x{}", self.params.name(w), wt.rows, wt.cols);
        let out = wt.rows;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; n * out];
        for i in 0..n {
            let xr = &xv[i * inp..(i + 1) * inp];
            for o in 0..out {
                value[i * out + o] = dot(xr, wt.row(o));
            }
        }
        if let Some(b) = b {
            let bt = &self.params.get(b).data;
            assert_eq!(bt.len(), out);
            for i in 0..n {
                for o in 0..out {
                    value[i * out + o] += bt[o];
                }
            }
        }
        self.push(n, out, value, Op::Linear { x, w, b })
    }

    /// `a: n x k` times `b: k x m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut value = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..k {
                let x = av[i * k + l];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[l * m..(l + 1) * m];
                let out = &mut value[i * m..(i + 1) * m];
                for (o, bb) in out.iter_mut().zip(brow) {
                    *o += x * bb;
                }
            }
        }
        self.push(n, m, value, Op::MatMul(a, b))
    }

    /// `a: n x k` times the transpose of `b: m x k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimension");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut value = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                value[i * m + j] = dot(&av[i * k..(i + 1) * k], &bv[j * k..(j + 1) * k]);
            }
        }
        self.push(n, m, value, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = xv[i * c + j];
            }
        }
        self.push(c, r, value, Op::Transpose(x))
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "elementwise shape mismatch");
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(r, c, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies every row of `m` elementwise by the row vector `v`.
    pub fn mul_row(&mut self, m: Var, v: Var) -> Var {
        let (r, c) = self.shape(m);
        assert_eq!(self.shape(v), (1, c), "mul_row expects a 1 x cols vector");
        let vv = &self.nodes[v.0].value;
        let value = self.nodes[m.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x * vv[i % c])
            .collect();
        self.push(r, c, value, Op::MulRow(m, v))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(x);
        let value = self.nodes[x.0].value.iter().map(|v| f(*v)).collect();
        self.push(r, c, value, op)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.map(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.map(x, f64::cos, Op::Cos(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.map(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = self.shape(*p);
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.nodes[p.0].value[i * w..(i + 1) * w]);
            }
        }
        self.push(rows, total, value, Op::ConcatCols(parts.to_vec()))
    }

    /// Vertical stack of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut value = Vec::new();
        for p in parts {
            let (r, c) = self.shape(*p);
            assert_eq!(c, cols, "stack_rows column mismatch");
            rows += r;
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(rows, cols, value, Op::StackRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(start + len <= c, "slice_cols out of range");
        let xv = &self.nodes[x.0].value;
        let mut value = Vec::with_capacity(r * len);
        for i in 0..r {
            value.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        self.push(r, len, value, Op::SliceCols(x, start))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(i < r, "row out of range");
        let value = self.nodes[x.0].value[i * c..(i + 1) * c].to_vec();
        self.push(1, c, value, Op::Row(x, i))
    }

    /// Broadcasts a `1 x c` vector to `n x c`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(r, 1, "repeat_rows expects a row vector");
        let mut value = Vec::with_capacity(n * c);
        for _ in 0..n {
            value.extend_from_slice(&self.nodes[x.0].value);
        }
        self.push(n, c, value, Op::RepeatRows(x))
    }

    /// Row sums, `n x c -> n x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let value = (0..r).map(|i| xv[i * c..(i + 1) * c].iter().sum()).collect();
        self.push(r, 1, value, Op::SumCols(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let m = xv.iter().sum::<f64>() / xv.len() as f64;
        self.push(1, 1, vec![m], Op::MeanAll(x))
    }

    /// Row-wise softmax; with `causal`, entries above the diagonal get zero
    /// weight (square inputs only).
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Var {
        let (r, c) = self.shape(x);
        if causal {
            assert_eq!(r, c, "causal softmax needs a square matrix");
        }
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let width = if causal { i + 1 } else { c };
            let row = &xv[i * c..i * c + width];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..width {
                let e = (row[j] - m).exp();
                value[i * c + j] = e;
                z += e;
            }
            for j in 0..width {
                value[i * c + j] /= z;
            }
        }
        self.push(r, c, value, Op::SoftmaxRows { x, causal })
    }

    /// Max-stabilized `log(sum(exp(x)))` over all entries.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let v = logsumexp(&self.nodes[x.0].value);
        self.push(1, 1, vec![v], Op::LogSumExp(x))
    }

    /// Single element (flat index) as a `1 x 1` node.
    pub fn pick(&mut self, x: Var, i: usize) -> Var {
        let v = self.nodes[x.0].value[i];
        self.push(1, 1, vec![v], Op::Pick(x, i))
    }

    /// Diagonal selective scan.
    ///
    /// `u, delta: steps x dim`, `b, c: steps x n`, `a: dim x n` (negative).
    /// Per channel `j` and state slot `k`:
    /// `s = exp(delta[j] a[j,k]) s + delta[j] b[k] u[j]`, `h[j] = sum_k c[k] s[j,k]`.
    pub fn selective_scan(&mut self, u: Var, delta: Var, b: Var, c: Var, a: Var) -> Var {
        let (steps, dim) = self.shape(u);
        assert_eq!(self.shape(delta), (steps, dim));
        let n = self.shape(a).1;
        assert_eq!(self.shape(a), (dim, n));
        assert_eq!(self.shape(b), (steps, n));
        assert_eq!(self.shape(c), (steps, n));
        let uv = &self.nodes[u.0].value;
        let dv = &self.nodes[delta.0].value;
        let bv = &self.nodes[b.0].value;
        let cv = &self.nodes[c.0].value;
        let av = &self.nodes[a.0].value;
        let mut state = vec![0.0; dim * n];
        let mut states = Vec::with_capacity(steps * dim * n);
        let mut out = vec![0.0; steps * dim];
        for t in 0..steps {
            for j in 0..dim {
                let dt = dv[t * dim + j];
                let inp = dt * uv[t * dim + j];
                let mut h = 0.0;
                for k in 0..n {
                    let s = &mut state[j * n + k];
                    *s = (dt * av[j * n + k]).exp() * *s + inp * bv[t * n + k];
                    h += cv[t * n + k] * *s;
                }
                out[t * dim + j] = h;
            }
            states.extend_from_slice(&state);
        }
        let cache = ScanCache {
            u,
            delta,
            b,
            c,
            a,
            states,
        };
        self.push(steps, dim, out, Op::Scan(Box::new(cache)))
    }

    /// Accumulates `d(root)/d(param)` into `grads`, scaled by `seed`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Gradients) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward needs a scalar root");
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        g[root.0] = vec![seed];
        for idx in (0..=root.0).rev() {
            let gi = std::mem::take(&mut g[idx]);
            if gi.is_empty() {
                continue;
            }
            let node = &self.nodes[idx];
            self.propagate(node, &gi, &mut g, grads);
        }
    }

    fn propagate(&self, node: &Node, gi: &[f64], g: &mut [Vec<f64>], grads: &mut Gradients) {
        let val = &node.value;
        match &node.op {
            Op::Const => {}
            Op::Param(id) => {
                for (acc, x) in grads.get_mut(*id).iter_mut().zip(gi) {
                    *acc += x;
                }
            }
            Op::Rows(id, idx) => {
                let cols = node.cols;
                let pg = grads.get_mut(*id);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..cols {
                        pg[i * cols + j] += gi[r * cols + j];
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, inp) = self.shape(*x);
                let out = node.cols;
                let wt = self.params.get(*w);
                {
                    let gx = grad_slot(g, *x, n * inp);
                    for i in 0..n {
                        let gxr = &mut gx[i * inp..(i + 1) * inp];
                        for o in 0..out {
                            let go = gi[i * out + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (a, wv) in gxr.iter_mut().zip(wt.row(o)) {
                                *a += go * wv;
                            }
                        }
                    }
                }
                let xv = &self.nodes[x.0].value;
                let gw = grads.get_mut(*w);
                for i in 0..n {
                    let xr = &xv[i * inp..(i + 1) * inp];
                    for o in 0..out {
                        let go = gi[i * out + o];
                        if go == 0.0 {
                            continue;
                        }
                        for (a, xx) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                            *a += go * xx;
                        }
                    }
                }
                if let Some(b) = b {
                    let gb = grads.get_mut(*b);
                    for i in 0..n {
                        for o in 0..out {
                            gb[o] += gi[i * out + o];
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = node.cols;
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                {
                    let ga = grad_slot(g, *a, n * k);
                    for i in 0..n {
                        for l in 0..k {
                            ga[i * k + l] += dot(&gi[i * m..(i + 1) * m], &bv[l * m..(l + 1) * m]);
                        }
                    }
                }
                let gb = grad_slot(g, *b, k * m);
                for i in 0..n {
                    for l in 0..k {
                        let x = av[i * k + l];
                        for j in 0..m {
                            gb[l * m + j] += x * gi[i * m + j];
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let (n, k) = self.shape(*a);
                let m = node.cols;
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                {
                    let ga = grad_slot(g, *a, n * k);
                    for i in 0..n {
                        for j in 0..m {
                            let go = gi[i * m + j];
                            for l in 0..k {
                                ga[i * k + l] += go * bv[j * k + l];
                            }
                        }
                    }
                }
                let gb = grad_slot(g, *b, m * k);
                for i in 0..n {
                    for j in 0..m {
                        let go = gi[i * m + j];
                        for l in 0..k {
                            gb[j * k + l] += go * av[i * k + l];
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.shape(*x);
                let gx = grad_slot(g, *x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += gi[j * r + i];
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(g, *a, gi);
                accumulate(g, *b, gi);
            }
            Op::Sub(a, b) => {
                accumulate(g, *a, gi);
                let gb = grad_slot(g, *b, gi.len());
                for (acc, x) in gb.iter_mut().zip(gi) {
                    *acc -= x;
                }
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                {
                    let ga = grad_slot(g, *a, gi.len());
                    for i in 0..gi.len() {
                        ga[i] += gi[i] * bv[i];
                    }
                }
                let gb = grad_slot(g, *b, gi.len());
                for i in 0..gi.len() {
                    gb[i] += gi[i] * av[i];
                }
            }
            Op::MulRow(m, v) => {
                let c = node.cols;
                let mv = &self.nodes[m.0].value;
                let vv = &self.nodes[v.0].value;
                {
                    let gm = grad_slot(g, *m, gi.len());
                    for i in 0..gi.len() {
                        gm[i] += gi[i] * vv[i % c];
                    }
                }
                let gv = grad_slot(g, *v, c);
                for i in 0..gi.len() {
                    gv[i % c] += gi[i] * mv[i];
                }
            }
            Op::Scale(x, s) => {
                let gx = grad_slot(g, *x, gi.len());
                for (acc, go) in gx.iter_mut().zip(gi) {
                    *acc += go * s;
                }
            }
            Op::AddScalar(x) => accumulate(g, *x, gi),
            Op::Sigmoid(x) => {
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] += gi[i] * val[i] * (1.0 - val[i]);
                }
            }
            Op::Tanh(x) => {
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] += gi[i] * (1.0 - val[i] * val[i]);
                }
            }
            Op::Exp(x) => {
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] += gi[i] * val[i];
                }
            }
            Op::Softplus(x) => {
                let xv = &self.nodes[x.0].value;
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] += gi[i] * sigmoid(xv[i]);
                }
            }
            Op::Sin(x) => {
                let xv = &self.nodes[x.0].value;
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] += gi[i] * xv[i].cos();
                }
            }
            Op::Cos(x) => {
                let xv = &self.nodes[x.0].value;
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] -= gi[i] * xv[i].sin();
                }
            }
            Op::Sqrt(x) => {
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] += gi[i] * 0.5 / val[i];
                }
            }
            Op::Square(x) => {
                let xv = &self.nodes[x.0].value;
                let gx = grad_slot(g, *x, gi.len());
                for i in 0..gi.len() {
                    gx[i] += gi[i] * 2.0 * xv[i];
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.rows;
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    let gp = grad_slot(g, *p, rows * w);
                    for i in 0..rows {
                        for j in 0..w {
                            gp[i * w + j] += gi[i * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    accumulate(g, *p, &gi[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let len = node.cols;
                let gx = grad_slot(g, *x, r * c);
                for i in 0..r {
                    for j in 0..len {
                        gx[i * c + start + j] += gi[i * len + j];
                    }
                }
            }
            Op::Row(x, i) => {
                let (r, c) = self.shape(*x);
                let gx = grad_slot(g, *x, r * c);
                for j in 0..c {
                    gx[i * c + j] += gi[j];
                }
            }
            Op::RepeatRows(x) => {
                let c = node.cols;
                let gx = grad_slot(g, *x, c);
                for (i, go) in gi.iter().enumerate() {
                    gx[i % c] += go;
                }
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                let gx = grad_slot(g, *x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += gi[i];
                    }
                }
            }
            Op::MeanAll(x) => {
                let len = self.nodes[x.0].value.len();
                let gx = grad_slot(g, *x, len);
                let s = gi[0] / len as f64;
                gx.iter_mut().for_each(|a| *a += s);
            }
            Op::SoftmaxRows { x, causal } => {
                let (r, c) = (node.rows, node.cols);
                let gx = grad_slot(g, *x, r * c);
                for i in 0..r {
                    let width = if *causal { i + 1 } else { c };
                    let y = &val[i * c..i * c + width];
                    let go = &gi[i * c..i * c + width];
                    let inner = dot(y, go);
                    for j in 0..width {
                        gx[i * c + j] += y[j] * (go[j] - inner);
                    }
                }
            }
            Op::LogSumExp(x) => {
                let xv = &self.nodes[x.0].value;
                let lse = val[0];
                let gx = grad_slot(g, *x, xv.len());
                for (acc, v) in gx.iter_mut().zip(xv) {
                    *acc += gi[0] * (v - lse).exp();
                }
            }
            Op::Pick(x, i) => {
                let len = self.nodes[x.0].value.len();
                grad_slot(g, *x, len)[*i] += gi[0];
            }
            Op::Scan(cache) => self.scan_backward(cache, gi, g),
        }
    }

    fn scan_backward(&self, cache: &ScanCache, gh: &[f64], g: &mut [Vec<f64>]) {
        let (steps, dim) = self.shape(cache.u);
        let n = self.shape(cache.a).1;
        let uv = &self.nodes[cache.u.0].value;
        let dv = &self.nodes[cache.delta.0].value;
        let bv = &self.nodes[cache.b.0].value;
        let cv = &self.nodes[cache.c.0].value;
        let av = &self.nodes[cache.a.0].value;
        let mut gu = vec![0.0; steps * dim];
        let mut gd = vec![0.0; steps * dim];
        let mut gb = vec![0.0; steps * n];
        let mut gc = vec![0.0; steps * n];
        let mut ga = vec![0.0; dim * n];
        // gradient flowing into the state after step t
        let mut gs = vec![0.0; dim * n];
        let zeros = vec![0.0; dim * n];
        for t in (0..steps).rev() {
            let s_t = &cache.states[t * dim * n..(t + 1) * dim * n];
            let s_prev = if t == 0 {
                &zeros[..]
            } else {
                &cache.states[(t - 1) * dim * n..t * dim * n]
            };
            for j in 0..dim {
                let go = gh[t * dim + j];
                let dt = dv[t * dim + j];
                let ut = uv[t * dim + j];
                let mut g_dt = 0.0;
                let mut g_u = 0.0;
                for k in 0..n {
                    let jk = j * n + k;
                    gc[t * n + k] += go * s_t[jk];
                    let gsk = gs[jk] + go * cv[t * n + k];
                    let decay = (dt * av[jk]).exp();
                    // s_t = decay * s_prev + dt * b * u
                    let g_decay = gsk * s_prev[jk];
                    g_dt += g_decay * decay * av[jk] + gsk * bv[t * n + k] * ut;
                    ga[jk] += g_decay * decay * dt;
                    gb[t * n + k] += gsk * dt * ut;
                    g_u += gsk * dt * bv[t * n + k];
                    gs[jk] = gsk * decay;
                }
                gd[t * dim + j] += g_dt;
                gu[t * dim + j] += g_u;
            }
        }
        accumulate(g, cache.u, &gu);
        accumulate(g, cache.delta, &gd);
        accumulate(g, cache.b, &gb);
        accumulate(g, cache.c, &gc);
        accumulate(g, cache.a, &ga);
    }
}

fn grad_slot(g: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
    let slot = &mut g[v.0];
    if slot.is_empty() {
        *slot = vec![0.0; len];
    }
    slot
}

fn accumulate(g: &mut [Vec<f64>], v: Var, src: &[f64]) {
    let slot = grad_slot(g, v, src.len());
    for (a, x) in slot.iter_mut().zip(src) {
        *a += x;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Checks every op's backward against central differences on one parameter.
    fn check(build: impl Fn(&mut Tape<'_>, ParamId) -> Var, rows: usize, cols: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamStore::new();
        let p = ps.add("p", rows, cols, Init::Uniform(-0.9, 0.9), &mut rng);
        let mut grads = Gradients::zeros_like(&ps);
        {
            let mut t = Tape::new(&ps);
            let out = build(&mut t, p);
            t.backward(out, 1.0, &mut grads);
        }
        let h = 1e-6;
        for i in 0..rows * cols {
            let eval = |delta: f64| {
                let mut q = ps.clone();
                q.get_mut(p).data[i] += delta;
                let mut t = Tape::new(&q);
                let out = build(&mut t, p);
                t.scalar(out)
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let ana = grads.get(p)[i];
            assert!((num - ana).abs() < 1e-6 * (1.0 + num.abs()), "elem {i}: {ana} vs {num}");
        }
    }

    #[test]
    fn elementwise_ops() {
        check(
            |t, p| {
                let x = t.param(p);
                let a = t.sigmoid(x);
                let b = t.tanh(x);
                let c = t.mul(a, b);
                let d = t.softplus(c);
                let e = t.exp(d);
                let f = t.sin(e);
                let h = t.cos(x);
                let k = t.sub(f, h);
                let s = t.square(k);
                let s = t.add_scalar(s, 1.0);
                let s = t.sqrt(s);
                let s = t.scale(s, 0.7);
                t.mean_all(s)
            },
            3,
            4,
        );
    }

    #[test]
    fn matrix_ops() {
        check(
            |t, p| {
                let x = t.param(p);
                let xt = t.transpose(x);
                let m = t.matmul(x, xt);
                let sm = t.softmax_rows(m, true);
                let mm = t.matmul(sm, x);
                let mt = t.matmul_t(mm, x);
                let r0 = t.row(mm, 1);
                let rep = t.repeat_rows(r0, 3);
                let mr = t.mul_row(rep, r0);
                let cat = t.concat_cols(&[mr, mt]);
                let sl = t.slice_cols(cat, 2, 4);
                let st = t.stack_rows(&[sl, r0]);
                let sc = t.sum_cols(st);
                let sct = t.transpose(sc);
                let l = t.logsumexp(sct);
                let pk = t.pick(st, 5);
                t.add(l, pk)
            },
            3,
            4,
        );
    }

    #[test]
    fn scan_gradients() {
        check(
            |t, p| {
                let x = t.param(p);
                let u = t.slice_cols(x, 0, 2);
                let d0 = t.slice_cols(x, 2, 2);
                let delta = t.softplus(d0);
                let b = t.slice_cols(x, 4, 3);
                let c = t.slice_cols(x, 7, 3);
                let a0 = t.slice_cols(x, 0, 3);
                let a0 = t.row(a0, 0);
                let a1 = t.slice_cols(x, 3, 3);
                let a1 = t.row(a1, 1);
                let a = t.stack_rows(&[a0, a1]);
                let a = t.softplus(a);
                let a = t.scale(a, -1.0);
                let h = t.selective_scan(u, delta, b, c, a);
                let h = t.square(h);
                t.mean_all(h)
            },
            4,
            10,
        );
    }
}
