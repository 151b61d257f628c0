//! Batched computation graphs.
//!
//! Every value is a `rows x width` row-major block, where `rows` is the batch
//! size (or 1 for scalars and parameter leaves). Model code is written once
//! against [`Graph`] and runs either on [`Eval`] (plain inference, values are
//! dropped as soon as they go out of scope) or on [`Tape`] (values are kept
//! and [`Tape::backward`] replays the recording in reverse).

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::neural::params::{ParamId, ParamStore};
use crate::ssmodel::VectorFunction;

/// Operations needed to express the smoother and its gain networks.
pub trait Graph {
    type Var: Clone;

    fn params(&self) -> &ParamStore;

    /// Constant block with `width` columns; `data.len()` must be a multiple of `width`.
    fn input(&mut self, width: usize, data: Vec<f64>) -> Self::Var;
    /// Constant copy of `v` that blocks gradient flow.
    fn detach(&mut self, v: &Self::Var) -> Self::Var;
    /// Parameter tensor as a `1 x len` leaf.
    fn param(&mut self, id: ParamId) -> Self::Var;

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a [f64];
    fn width(&self, v: &Self::Var) -> usize;

    fn rows(&self, v: &Self::Var) -> usize {
        self.value(v).len() / self.width(v).max(1)
    }

    /// `x Wᵀ + b` with `W` stored `out x in`.
    fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: &Self::Var) -> Self::Var;
    /// `relu(x Wᵀ + b)`.
    fn affine_relu(&mut self, w: ParamId, b: Option<ParamId>, x: &Self::Var) -> Self::Var {
        let y = self.affine(w, b, x);
        self.relu(&y)
    }
    /// `x Wᵀ + b + h Uᵀ`.
    fn affine_pair(&mut self, w: ParamId, b: Option<ParamId>, x: &Self::Var, u: ParamId, h: &Self::Var) -> Self::Var {
        let a = self.affine(w, b, x);
        let c = self.affine(u, None, h);
        self.add(&a, &c)
    }
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn scale(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    fn sigmoid(&mut self, a: &Self::Var) -> Self::Var;
    fn tanh(&mut self, a: &Self::Var) -> Self::Var;
    fn relu(&mut self, a: &Self::Var) -> Self::Var;
    fn concat(&mut self, parts: &[&Self::Var]) -> Self::Var;
    fn slice(&mut self, a: &Self::Var, start: usize, len: usize) -> Self::Var;
    /// Row-wise `M_b v_b`, each row of `mat` holding a row-major `rows x cols` matrix.
    fn batch_matvec(&mut self, mat: &Self::Var, rows: usize, cols: usize, v: &Self::Var) -> Self::Var;
    /// Row-wise application of a known function.
    fn map_fn(&mut self, f: &dyn VectorFunction, x: &Self::Var) -> Self::Var;

    /// Scalar `Σ (x - target)²` over all entries.
    fn sq_error(&mut self, x: &Self::Var, target: &[f64]) -> Self::Var;
    /// Scalar `Σ x²`.
    fn sum_squares(&mut self, x: &Self::Var) -> Self::Var;
    /// Sum of scalars.
    fn sum(&mut self, parts: &[Self::Var]) -> Self::Var;
}

// ---------------------------------------------------------------------------
// kernels

#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= last(m, k, rsa, csa));
    assert!(b.len() >= last(k, n, rsb, csb));
    assert!(c.len() >= last(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn affine_forward(w: &[f64], bias: Option<&[f64]>, x: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let (mut y, beta) = match bias {
        Some(b) => {
            let mut y = Vec::with_capacity(rows * out);
            for _ in 0..rows {
                y.extend_from_slice(&b[..out]);
            }
            (y, 1.0)
        }
        None => (vec![0.0; rows * out], 0.0),
    };
    gemm((rows, inp, out), x, (inp, 1), w, (1, inp), beta, &mut y, (out, 1));
    y
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn concat_rows(parts: &[(&[f64], usize)], rows: usize) -> (Vec<f64>, usize) {
    let width: usize = parts.iter().map(|(_, w)| w).sum();
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for (data, w) in parts {
            out.extend_from_slice(&data[r * w..(r + 1) * w]);
        }
    }
    (out, width)
}

fn slice_rows(data: &[f64], width: usize, start: usize, len: usize) -> Vec<f64> {
    assert!(start + len <= width, "slice out of range");
    data.chunks(width)
        .flat_map(|row| row[start..start + len].iter().copied())
        .collect()
}

fn matvec_rows(mat: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    let batch = v.len() / cols;
    assert_eq!(mat.len(), batch * rows * cols, "batch_matvec shape mismatch");
    let mut out = vec![0.0; batch * rows];
    for b in 0..batch {
        let m = &mat[b * rows * cols..(b + 1) * rows * cols];
        let x = &v[b * cols..(b + 1) * cols];
        for i in 0..rows {
            out[b * rows + i] = m[i * cols..(i + 1) * cols].iter().zip(x).map(|(a, c)| a * c).sum();
        }
    }
    out
}

fn map_rows(f: &dyn VectorFunction, x: &[f64]) -> (Vec<f64>, usize) {
    let (inp, out) = (f.input_dim(), f.output_dim());
    assert_eq!(x.len() % inp, 0, "map_fn input width mismatch");
    let rows = x.len() / inp;
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        f.eval(&x[r * inp..(r + 1) * inp], &mut y[r * out..(r + 1) * out]);
    }
    (y, out)
}

fn zip_with(a: &[f64], b: &[f64], op: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise shape mismatch");
    a.iter().zip(b).map(|(x, y)| op(*x, *y)).collect()
}

// ---------------------------------------------------------------------------
// eager evaluation

/// Owned value produced by [`Eval`].
#[derive(Clone, Debug, PartialEq)]
pub struct Value {
    pub width: usize,
    pub data: Vec<f64>,
}

/// Gradient-free evaluation.
pub struct Eval<'p> {
    params: &'p ParamStore,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params }
    }
}

impl Graph for Eval<'_> {
    type Var = Value;

    fn params(&self) -> &ParamStore {
        self.params
    }

    fn input(&mut self, width: usize, data: Vec<f64>) -> Value {
        assert!(width > 0 && data.len().is_multiple_of(width), "input width mismatch");
        Value { width, data }
    }

    fn detach(&mut self, v: &Value) -> Value {
        v.clone()
    }

    fn param(&mut self, id: ParamId) -> Value {
        let data = self.params.get(id).data().to_vec();
        Value {
            width: data.len(),
            data,
        }
    }

    fn value<'a>(&'a self, v: &'a Value) -> &'a [f64] {
        &v.data
    }

    fn width(&self, v: &Value) -> usize {
        v.width
    }

    fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: &Value) -> Value {
        let wt = self.params.get(w);
        let (out, inp) = (wt.shape()[0], wt.shape()[1]);
        assert_eq!(x.width, inp, "affine input width mismatch");
        let bias = b.map(|b| self.params.get(b).data());
        let rows = x.data.len() / inp;
        Value {
            width: out,
            data: affine_forward(wt.data(), bias, &x.data, rows, inp, out),
        }
    }

    fn affine_relu(&mut self, w: ParamId, b: Option<ParamId>, x: &Value) -> Value {
        let mut y = self.affine(w, b, x);
        for v in &mut y.data {
            *v = v.max(0.0);
        }
        y
    }

    fn affine_pair(&mut self, w: ParamId, b: Option<ParamId>, x: &Value, u: ParamId, h: &Value) -> Value {
        let mut y = self.affine(w, b, x);
        let ut = self.params.get(u);
        let (out, inp) = (ut.shape()[0], ut.shape()[1]);
        assert_eq!(h.width, inp, "affine input width mismatch");
        assert_eq!(y.width, out, "affine output width mismatch");
        let rows = h.data.len() / inp;
        gemm(
            (rows, inp, out),
            &h.data,
            (inp, 1),
            ut.data(),
            (1, inp),
            1.0,
            &mut y.data,
            (out, 1),
        );
        y
    }

    fn add(&mut self, a: &Value, b: &Value) -> Value {
        Value {
            width: a.width,
            data: zip_with(&a.data, &b.data, |x, y| x + y),
        }
    }

    fn sub(&mut self, a: &Value, b: &Value) -> Value {
        Value {
            width: a.width,
            data: zip_with(&a.data, &b.data, |x, y| x - y),
        }
    }

    fn mul(&mut self, a: &Value, b: &Value) -> Value {
        Value {
            width: a.width,
            data: zip_with(&a.data, &b.data, |x, y| x * y),
        }
    }

    fn scale(&mut self, a: &Value, c: f64) -> Value {
        Value {
            width: a.width,
            data: a.data.iter().map(|v| v * c).collect(),
        }
    }

    fn sigmoid(&mut self, a: &Value) -> Value {
        Value {
            width: a.width,
            data: a.data.iter().map(|v| sigmoid(*v)).collect(),
        }
    }

    fn tanh(&mut self, a: &Value) -> Value {
        Value {
            width: a.width,
            data: a.data.iter().map(|v| v.tanh()).collect(),
        }
    }

    fn relu(&mut self, a: &Value) -> Value {
        Value {
            width: a.width,
            data: a.data.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    fn concat(&mut self, parts: &[&Value]) -> Value {
        let rows = parts[0].data.len() / parts[0].width;
        let views: Vec<_> = parts.iter().map(|p| (p.data.as_slice(), p.width)).collect();
        let (data, width) = concat_rows(&views, rows);
        Value { width, data }
    }

    fn slice(&mut self, a: &Value, start: usize, len: usize) -> Value {
        Value {
            width: len,
            data: slice_rows(&a.data, a.width, start, len),
        }
    }

    fn batch_matvec(&mut self, mat: &Value, rows: usize, cols: usize, v: &Value) -> Value {
        assert_eq!(mat.width, rows * cols, "batch_matvec matrix width mismatch");
        assert_eq!(v.width, cols, "batch_matvec vector width mismatch");
        Value {
            width: rows,
            data: matvec_rows(&mat.data, rows, cols, &v.data),
        }
    }

    fn map_fn(&mut self, f: &dyn VectorFunction, x: &Value) -> Value {
        assert_eq!(x.width, f.input_dim(), "map_fn input width mismatch");
        let (data, width) = map_rows(f, &x.data);
        Value { width, data }
    }

    fn sq_error(&mut self, x: &Value, target: &[f64]) -> Value {
        let total = zip_with(&x.data, target, |a, b| (a - b) * (a - b)).iter().sum();
        Value {
            width: 1,
            data: vec![total],
        }
    }

    fn sum_squares(&mut self, x: &Value) -> Value {
        Value {
            width: 1,
            data: vec![x.data.iter().map(|v| v * v).sum()],
        }
    }

    fn sum(&mut self, parts: &[Value]) -> Value {
        Value {
            width: 1,
            data: vec![parts.iter().map(|p| p.data[0]).sum()],
        }
    }
}

// ---------------------------------------------------------------------------
// recording tape

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Concat(Vec<usize>),
    Slice {
        a: usize,
        start: usize,
    },
    MatVec {
        mat: usize,
        v: usize,
        rows: usize,
        cols: usize,
    },
    /// Jacobians (one `out x in` block per row) live at `aux[jac..]`.
    Map {
        x: usize,
        jac: usize,
        inp: usize,
    },
    /// Target values live at `aux[target..]`.
    SqError {
        x: usize,
        target: usize,
    },
    SumSquares(usize),
    Sum(Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    offset: usize,
    len: usize,
    width: usize,
    op: Op,
}

/// Gradients of a scalar with respect to every parameter it depends on.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    touched: Vec<bool>,
    names: Vec<String>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            touched: vec![false; params.len()],
            names: params.iter().map(|(n, _)| n.to_string()).collect(),
        }
    }

    /// Gradient for `id`; errors if the parameter never took part in the recording.
    pub fn get(&self, id: ParamId) -> Result<&[f64]> {
        if !self.touched[id.0] {
            return Err(Error::MissingGradient(self.names[id.0].clone()));
        }
        Ok(&self.grads[id.0])
    }

    /// Errors unless every parameter received a gradient.
    pub fn require_all(&self) -> Result<()> {
        match self.touched.iter().position(|t| !t) {
            Some(i) => Err(Error::MissingGradient(self.names[i].clone())),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Raw per-parameter buffers, zero for untouched parameters.
    pub fn as_slices(&self) -> &[Vec<f64>] {
        &self.grads
    }

    pub fn as_slices_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.grads
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for (dst, src) in self.touched.iter_mut().zip(&other.touched) {
            *dst |= *src;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    /// `‖∇‖₂` over all parameters.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    values: Vec<f64>,
    aux: Vec<f64>,
}

/// Storage of the last dropped tape on this thread. Training records tapes of
/// the same size batch after batch; reusing the allocation avoids faulting in
/// fresh pages every time.
#[derive(Default)]
struct TapeStorage {
    nodes: Vec<Node>,
    values: Vec<f64>,
    aux: Vec<f64>,
    grads: Vec<f64>,
}

thread_local! {
    static STORAGE: RefCell<TapeStorage> = RefCell::new(TapeStorage::default());
}

impl Drop for Tape<'_> {
    fn drop(&mut self) {
        let (mut nodes, mut values, mut aux) = (
            std::mem::take(&mut self.nodes),
            std::mem::take(&mut self.values),
            std::mem::take(&mut self.aux),
        );
        nodes.clear();
        values.clear();
        aux.clear();
        let _ = STORAGE.try_with(|s| {
            let mut s = s.borrow_mut();
            s.nodes = nodes;
            s.values = values;
            s.aux = aux;
        });
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        let (nodes, values, aux) = STORAGE
            .try_with(|s| {
                let mut s = s.borrow_mut();
                (
                    std::mem::take(&mut s.nodes),
                    std::mem::take(&mut s.values),
                    std::mem::take(&mut s.aux),
                )
            })
            .unwrap_or_default();
        Self {
            params,
            nodes,
            values,
            aux,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, width: usize, data: Vec<f64>, op: Op) -> Var {
        let offset = self.values.len();
        let len = data.len();
        self.values.extend(data);
        self.nodes.push(Node { offset, len, width, op });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, id: usize) -> &[f64] {
        let node = &self.nodes[id];
        &self.values[node.offset..node.offset + node.len]
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = zip_with(self.data(a.0), self.data(b.0), f);
        let width = self.nodes[a.0].width;
        self.push(width, data, op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(a.0).iter().map(|v| f(*v)).collect();
        let width = self.nodes[a.0].width;
        self.push(width, data, op)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.len != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar, got {} values",
                root.len
            )));
        }
        let mut grads = STORAGE
            .try_with(|s| std::mem::take(&mut s.borrow_mut().grads))
            .unwrap_or_default();
        grads.clear();
        grads.resize(root.offset + 1, 0.0);
        grads[root.offset] = 1.0;
        let out = self.sweep(loss, &mut grads);
        let _ = STORAGE.try_with(|s| s.borrow_mut().grads = grads);
        Ok(out)
    }

    fn sweep(&self, loss: &Var, grads: &mut [f64]) -> Gradients {
        let mut out = Gradients::zeros_like(self.params);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let (lower, upper) = grads.split_at_mut(node.offset);
            let g = &upper[..node.len];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let val = &self.values[node.offset..node.offset + node.len];
            let span = |i: usize| {
                let n = &self.nodes[i];
                n.offset..n.offset + n.len
            };
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    out.touched[pid.0] = true;
                    for (d, s) in out.grads[pid.0].iter_mut().zip(g) {
                        *d += s;
                    }
                }
                Op::Affine { w, b, x } => {
                    let wt = self.params.get(*w);
                    let (o, inp) = (wt.shape()[0], wt.shape()[1]);
                    let rows = node.len / o;
                    let xs = &self.values[span(*x)];
                    // dX += dY W
                    gemm(
                        (rows, o, inp),
                        g,
                        (o, 1),
                        wt.data(),
                        (inp, 1),
                        1.0,
                        &mut lower[span(*x)],
                        (inp, 1),
                    );
                    // dW += dYᵀ X
                    out.touched[w.0] = true;
                    gemm(
                        (o, rows, inp),
                        g,
                        (1, o),
                        xs,
                        (inp, 1),
                        1.0,
                        &mut out.grads[w.0],
                        (inp, 1),
                    );
                    if let Some(b) = b {
                        out.touched[b.0] = true;
                        let db = &mut out.grads[b.0];
                        for row in g.chunks(o) {
                            for (d, s) in db.iter_mut().zip(row) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (d, s) in lower[span(*a)].iter_mut().zip(g) {
                        *d += s;
                    }
                    for (d, s) in lower[span(*b)].iter_mut().zip(g) {
                        *d += s;
                    }
                }
                Op::Sub(a, b) => {
                    for (d, s) in lower[span(*a)].iter_mut().zip(g) {
                        *d += s;
                    }
                    for (d, s) in lower[span(*b)].iter_mut().zip(g) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.values[span(*a)], &self.values[span(*b)]);
                    for ((d, s), o) in lower[span(*a)].iter_mut().zip(g).zip(bv) {
                        *d += s * o;
                    }
                    for ((d, s), o) in lower[span(*b)].iter_mut().zip(g).zip(av) {
                        *d += s * o;
                    }
                }
                Op::Scale(a, c) => {
                    for (d, s) in lower[span(*a)].iter_mut().zip(g) {
                        *d += s * c;
                    }
                }
                Op::Sigmoid(a) => {
                    for ((d, s), y) in lower[span(*a)].iter_mut().zip(g).zip(val) {
                        *d += s * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    for ((d, s), y) in lower[span(*a)].iter_mut().zip(g).zip(val) {
                        *d += s * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    for ((d, s), y) in lower[span(*a)].iter_mut().zip(g).zip(val) {
                        if *y > 0.0 {
                            *d += s;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.len / node.width;
                    let mut col = 0;
                    for p in parts {
                        let pw = self.nodes[*p].width;
                        let dst = &mut lower[span(*p)];
                        for r in 0..rows {
                            let src = &g[r * node.width + col..r * node.width + col + pw];
                            for (d, s) in dst[r * pw..(r + 1) * pw].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        col += pw;
                    }
                }
                Op::Slice { a, start } => {
                    let aw = self.nodes[*a].width;
                    let dst = &mut lower[span(*a)];
                    for (r, row) in g.chunks(node.width).enumerate() {
                        for (j, s) in row.iter().enumerate() {
                            dst[r * aw + start + j] += s;
                        }
                    }
                }
                Op::MatVec { mat, v, rows, cols } => {
                    let (mv, vv) = (&self.values[span(*mat)], &self.values[span(*v)]);
                    let batch = node.len / rows;
                    {
                        let dm = &mut lower[span(*mat)];
                        for b in 0..batch {
                            for i in 0..*rows {
                                let gi = g[b * rows + i];
                                let base = b * rows * cols + i * cols;
                                for j in 0..*cols {
                                    dm[base + j] += gi * vv[b * cols + j];
                                }
                            }
                        }
                    }
                    let dv = &mut lower[span(*v)];
                    for b in 0..batch {
                        for i in 0..*rows {
                            let gi = g[b * rows + i];
                            let base = b * rows * cols + i * cols;
                            for j in 0..*cols {
                                dv[b * cols + j] += gi * mv[base + j];
                            }
                        }
                    }
                }
                Op::Map { x, jac, inp } => {
                    let out_w = node.width;
                    let rows = node.len / out_w;
                    let dx = &mut lower[span(*x)];
                    for r in 0..rows {
                        let jb = &self.aux[jac + r * out_w * inp..jac + (r + 1) * out_w * inp];
                        for i in 0..out_w {
                            let gi = g[r * out_w + i];
                            for j in 0..*inp {
                                dx[r * inp + j] += jb[i * inp + j] * gi;
                            }
                        }
                    }
                }
                Op::SqError { x, target } => {
                    let s = g[0];
                    let xs = &self.values[span(*x)];
                    let n = xs.len();
                    let tgt = &self.aux[*target..target + n];
                    for ((d, xv), tv) in lower[span(*x)].iter_mut().zip(xs).zip(tgt) {
                        *d += 2.0 * s * (xv - tv);
                    }
                }
                Op::SumSquares(a) => {
                    let s = g[0];
                    let xs = &self.values[span(*a)];
                    for (d, xv) in lower[span(*a)].iter_mut().zip(xs) {
                        *d += 2.0 * s * xv;
                    }
                }
                Op::Sum(parts) => {
                    let s = g[0];
                    for p in parts {
                        lower[self.nodes[*p].offset] += s;
                    }
                }
            }
        }
        out
    }
}

impl Graph for Tape<'_> {
    type Var = Var;

    fn params(&self) -> &ParamStore {
        self.params
    }

    fn input(&mut self, width: usize, data: Vec<f64>) -> Var {
        assert!(width > 0 && data.len().is_multiple_of(width), "input width mismatch");
        self.push(width, data, Op::Input)
    }

    fn detach(&mut self, v: &Var) -> Var {
        let data = self.data(v.0).to_vec();
        let width = self.nodes[v.0].width;
        self.push(width, data, Op::Input)
    }

    fn param(&mut self, id: ParamId) -> Var {
        let data = self.params.get(id).data().to_vec();
        let width = data.len();
        self.push(width, data, Op::Param(id))
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a [f64] {
        self.data(v.0)
    }

    fn width(&self, v: &Var) -> usize {
        self.nodes[v.0].width
    }

    fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: &Var) -> Var {
        let wt = self.params.get(w);
        let (out, inp) = (wt.shape()[0], wt.shape()[1]);
        assert_eq!(self.nodes[x.0].width, inp, "affine input width mismatch");
        let rows = self.nodes[x.0].len / inp;
        let bias = b.map(|b| self.params.get(b).data());
        let data = affine_forward(wt.data(), bias, self.data(x.0), rows, inp, out);
        self.push(out, data, Op::Affine { w, b, x: x.0 })
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        self.elementwise(*a, *b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        self.elementwise(*a, *b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        self.elementwise(*a, *b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        self.unary(*a, Op::Scale(a.0, c), |v| v * c)
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        self.unary(*a, Op::Sigmoid(a.0), sigmoid)
    }

    fn tanh(&mut self, a: &Var) -> Var {
        self.unary(*a, Op::Tanh(a.0), f64::tanh)
    }

    fn relu(&mut self, a: &Var) -> Var {
        self.unary(*a, Op::Relu(a.0), |v| v.max(0.0))
    }

    fn concat(&mut self, parts: &[&Var]) -> Var {
        let first = &self.nodes[parts[0].0];
        let rows = first.len / first.width;
        let views: Vec<_> = parts.iter().map(|p| (self.data(p.0), self.nodes[p.0].width)).collect();
        let (data, width) = concat_rows(&views, rows);
        self.push(width, data, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    fn slice(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let data = slice_rows(self.data(a.0), self.nodes[a.0].width, start, len);
        self.push(len, data, Op::Slice { a: a.0, start })
    }

    fn batch_matvec(&mut self, mat: &Var, rows: usize, cols: usize, v: &Var) -> Var {
        assert_eq!(
            self.nodes[mat.0].width,
            rows * cols,
            "batch_matvec matrix width mismatch"
        );
        assert_eq!(self.nodes[v.0].width, cols, "batch_matvec vector width mismatch");
        let data = matvec_rows(self.data(mat.0), rows, cols, self.data(v.0));
        self.push(
            rows,
            data,
            Op::MatVec {
                mat: mat.0,
                v: v.0,
                rows,
                cols,
            },
        )
    }

    fn map_fn(&mut self, f: &dyn VectorFunction, x: &Var) -> Var {
        let inp = f.input_dim();
        assert_eq!(self.nodes[x.0].width, inp, "map_fn input width mismatch");
        let jac = self.aux.len();
        let xs = self.data(x.0).to_vec();
        for row in xs.chunks(inp) {
            let j = f.jacobian(row);
            // nalgebra is column-major; store row-major.
            for i in 0..j.nrows() {
                for k in 0..j.ncols() {
                    self.aux.push(j[(i, k)]);
                }
            }
        }
        let (data, width) = map_rows(f, &xs);
        self.push(width, data, Op::Map { x: x.0, jac, inp })
    }

    fn sq_error(&mut self, x: &Var, target: &[f64]) -> Var {
        let xs = self.data(x.0);
        assert_eq!(xs.len(), target.len(), "sq_error target length mismatch");
        let total = xs.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let offset = self.aux.len();
        self.aux.extend_from_slice(target);
        self.push(1, vec![total], Op::SqError { x: x.0, target: offset })
    }

    fn sum_squares(&mut self, x: &Var) -> Var {
        let total = self.data(x.0).iter().map(|v| v * v).sum();
        self.push(1, vec![total], Op::SumSquares(x.0))
    }

    fn sum(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|p| self.data(p.0)[0]).sum();
        self.push(1, vec![total], Op::Sum(parts.iter().map(|p| p.0).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::{param_init, Init, Tensor};
    use crate::ssmodel::{LorenzConfig, LorenzMap};

    fn store_with(entries: &[(&str, &[usize], u64)]) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, shape, seed) in entries {
            let fan_in = *shape.last().unwrap();
            store.insert(*name, param_init(shape, Init::UniformFanIn(fan_in), *seed));
        }
        store
    }

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        let theta = store.insert("theta", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new(&store);
        let p = tape.param(theta);
        let loss = tape.sum_squares(&p);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(theta).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn detached_values_block_gradients() {
        let store = store_with(&[("w1", &[3, 2], 1), ("w2", &[1, 3], 2)]);
        let (w1, w2) = (store.id("w1").unwrap(), store.id("w2").unwrap());
        let mut tape = Tape::new(&store);
        let x = tape.input(2, vec![0.5, -1.0]);
        let hidden = tape.affine(w1, None, &x);
        let cut = tape.detach(&hidden);
        let out = tape.affine(w2, None, &cut);
        let loss = tape.sum_squares(&out);
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(w2).is_ok());
        assert!(matches!(grads.get(w1), Err(Error::MissingGradient(name)) if name == "w1"));
        assert!(grads.require_all().is_err());
    }

    #[test]
    fn eval_and_tape_agree() {
        let store = store_with(&[("w", &[4, 3], 5), ("b", &[4], 6)]);
        let (w, b) = (store.id("w").unwrap(), store.id("b").unwrap());
        let x = vec![0.1, -0.4, 0.9, 1.5, 0.2, -0.3];

        let mut eval = Eval::new(&store);
        let xe = eval.input(3, x.clone());
        let ye = eval.affine(w, Some(b), &xe);
        let ze = eval.tanh(&ye);

        let mut tape = Tape::new(&store);
        let xt = tape.input(3, x);
        let yt = tape.affine(w, Some(b), &xt);
        let zt = tape.tanh(&yt);
        assert_eq!(eval.value(&ze), tape.value(&zt));
    }

    /// Builds a scalar exercising every op and returns its value.
    fn composite<G: Graph>(g: &mut G, f: &LorenzMap) -> G::Var {
        let p = g.params();
        let (w1, b1, w2, b2, w3) = (
            p.id("w1").unwrap(),
            p.id("b1").unwrap(),
            p.id("w2").unwrap(),
            p.id("b2").unwrap(),
            p.id("w3").unwrap(),
        );
        let x = g.input(3, vec![0.3, -0.2, 0.5, 1.0, 0.4, -0.7]);
        let h = g.affine(w1, Some(b1), &x);
        let a = g.sigmoid(&h);
        let t = g.tanh(&h);
        let r = g.relu(&h);
        let prod = g.mul(&a, &t);
        let sum = g.add(&prod, &r);
        let diff = g.sub(&sum, &a);
        let sc = g.scale(&diff, 0.7);
        let cat = g.concat(&[&sc, &x]);
        let mid = g.affine(w2, Some(b2), &cat);
        let s1 = g.slice(&mid, 0, 3);
        let dyn_out = g.map_fn(f, &s1);
        let mat = g.affine(w3, None, &cat);
        let mv = g.batch_matvec(&mat, 3, 3, &dyn_out);
        let e = g.sq_error(&mv, &[0.1, 0.2, 0.3, -0.1, -0.2, -0.3]);
        let sq = g.sum_squares(&dyn_out);
        let w = g.param(w3);
        let reg = g.sum_squares(&w);
        let reg = g.scale(&reg, 1e-3);
        g.sum(&[e, sq, reg])
    }

    #[test]
    fn tape_gradient_matches_central_differences() {
        let mut store = store_with(&[
            ("w1", &[4, 3], 1),
            ("b1", &[4], 2),
            ("w2", &[5, 7], 3),
            ("b2", &[5], 4),
            ("w3", &[9, 7], 5),
        ]);
        let f = LorenzMap::new(LorenzConfig { order: 3, dtau: 0.02 });

        let grads = {
            let mut tape = Tape::new(&store);
            let loss = composite(&mut tape, &f);
            tape.backward(&loss).unwrap()
        };
        grads.require_all().unwrap();

        let eval_loss = |s: &ParamStore| {
            let mut g = Eval::new(s);
            let v = composite(&mut g, &f);
            v.data[0]
        };
        let step = 1e-5;
        let mut worst = 0.0_f64;
        for id in store.clone().ids() {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + step;
                let plus = eval_loss(&store);
                store.get_mut(id).data_mut()[k] = orig - step;
                let minus = eval_loss(&store);
                store.get_mut(id).data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let analytic = grads.get(id).unwrap()[k];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
