//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of a
//! scalar output with respect to every recorded node. Parameters enter the tape
//! through [`Tape::param`], which registers each [`ParamId`] at most once so its
//! gradient can be read back with [`Gradients::param_grads`].

use crate::nn::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    LinComb(Vec<(f64, Var)>),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Silu(Var),
    Relu(Var),
    Log2p1(Var),
    HCat(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    CausalSoftmax(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn row(&mut self, data: Vec<f64>) -> Var {
        self.constant(Mat::row(data))
    }

    /// Register a parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.shape(), self.value(b).shape(), "add shape mismatch");
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let v = Mat::from_vec(va.rows, va.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let v = Mat::from_vec(va.rows, va.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 x n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(r));
        assert_eq!(vr.rows, 1);
        assert_eq!(va.cols, vr.cols, "add_row width mismatch");
        let mut v = va.clone();
        for row in v.data.chunks_mut(vr.cols) {
            for (x, b) in row.iter_mut().zip(&vr.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, r))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `Σ cᵢ·xᵢ` over same-shaped inputs.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Var {
        assert!(!terms.is_empty());
        let first = self.value(terms[0].1);
        let mut v = Mat::zeros(first.rows, first.cols);
        let mut kept = Vec::with_capacity(terms.len());
        for &(c, x) in terms {
            let vx = self.value(x);
            assert_eq!(vx.shape(), v.shape(), "lincomb shape mismatch");
            if c == 0.0 {
                continue;
            }
            for (o, &xi) in v.data.iter_mut().zip(&vx.data) {
                *o += c * xi;
            }
            kept.push((c, x));
        }
        self.push(v, Op::LinComb(kept))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `log₂(1 + a)`, elementwise.
    pub fn log2p1(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln_1p() / std::f64::consts::LN_2);
        self.push(v, Op::Log2p1(a))
    }

    /// Column-wise concatenation of inputs with equal row counts.
    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows, rows, "hcat row mismatch");
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row_slice(r));
                off += m.cols;
            }
        }
        self.push(v, Op::HCat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.cols);
        let w = end - start;
        let mut v = Mat::zeros(va.rows, w);
        for r in 0..va.rows {
            v.data[r * w..(r + 1) * w].copy_from_slice(&va.data[r * va.cols + start..r * va.cols + end]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.rows);
        let v = Mat::from_vec(end - start, va.cols, va.data[start * va.cols..end * va.cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn row_of(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, r + 1)
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a), true);
        self.push(v, Op::CausalSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a), false);
        self.push(v, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Mat::scalar(m.sum() / m.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Squared L2 norm of `a` as a `1 x 1` node.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.sum(sq)
    }

    /// Gradient of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Mat::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads, params: self.params.clone() }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul_t(vb));
                accumulate(grads, *b, va.t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul(vb));
                accumulate(grads, *b, g.t_matmul(va));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip_map(g, vb, |gi, bi| gi * bi));
                accumulate(grads, *b, zip_map(g, va, |gi, ai| gi * ai));
            }
            Op::AddRow(a, r) => {
                accumulate(grads, *a, g.clone());
                let mut gr = Mat::zeros(1, g.cols);
                for row in g.data.chunks(g.cols) {
                    for (o, x) in gr.data.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                accumulate(grads, *r, gr);
            }
            Op::Affine(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|x| s * x));
            }
            Op::LinComb(terms) => {
                for &(c, x) in terms {
                    accumulate(grads, x, g.map(|v| c * v));
                }
            }
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi * y * (1.0 - y))),
            Op::Softplus(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, zip_map(g, va, |gi, x| gi * sigmoid(x)));
            }
            Op::Silu(a) => {
                let va = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    zip_map(g, va, |gi, x| {
                        let s = sigmoid(x);
                        gi * (s + x * s * (1.0 - s))
                    }),
                );
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, zip_map(g, va, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Log2p1(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, zip_map(g, va, |gi, x| gi / ((1.0 + x) * std::f64::consts::LN_2)));
            }
            Op::HCat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    let mut gp = Mat::zeros(g.rows, w);
                    for r in 0..g.rows {
                        gp.data[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + w]);
                    }
                    accumulate(grads, p, gp);
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let slot = grad_slot(grads, *a, va.rows, va.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        slot.data[r * va.cols + start + c] += g.data[r * g.cols + c];
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let va = self.value(*a);
                let slot = grad_slot(grads, *a, va.rows, va.cols);
                let off = start * va.cols;
                for (o, x) in slot.data[off..off + g.len()].iter_mut().zip(&g.data) {
                    *o += x;
                }
            }
            Op::CausalSoftmax(a) | Op::Softmax(a) => {
                // dx_j = y_j (g_j - Σ_k g_k y_k); masked entries have y = 0.
                let mut ga = Mat::zeros(out.rows, out.cols);
                for r in 0..out.rows {
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..out.cols {
                        ga.data[r * out.cols + c] = y[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, Mat::from_vec(va.rows, va.cols, vec![g.data[0]; va.len()]));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let s = g.data[0] / va.len() as f64;
                accumulate(grads, *a, Mat::from_vec(va.rows, va.cols, vec![s; va.len()]));
            }
        }
    }
}

fn softmax_rows(m: &Mat, causal: bool) -> Mat {
    let mut out = Mat::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let visible = if causal { (r + 1).min(m.cols) } else { m.cols };
        let row = &m.row_slice(r)[..visible];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (c, &x) in row.iter().enumerate() {
            let e = (x - max).exp();
            out.data[r * m.cols + c] = e;
            z += e;
        }
        for c in 0..visible {
            out.data[r * m.cols + c] /= z;
        }
    }
    out
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    Mat::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

fn grad_slot(grads: &mut [Option<Mat>], v: Var, rows: usize, cols: usize) -> &mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(rows, cols))
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. `v`, zero-filled when `v` did not influence the output.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| {
            let m = tape.value(v);
            Mat::zeros(m.rows, m.cols)
        })
    }

    /// Gradients of every parameter registered on the tape that received one.
    pub fn param_grads(&self) -> Vec<(ParamId, &Mat)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
            .collect()
    }
}
