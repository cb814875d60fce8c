//! Reverse-mode autodiff over dense matrices.
//!
//! A [`Graph`] records every operation of one forward pass; [`Graph::backward`]
//! then fills gradients for every recorded node. Matrices are `nalgebra`
//! column-major, but [`Graph::reshape`] follows row-major element order so a
//! `(B·N)×d` node-major batch reshapes to `B×(N·d)` the way one would expect.

use std::rc::Rc;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    /// `1/(1+e^{−kz})`
    Sigmoid(f64),
    Abs,
    Sqrt,
    Square,
    Cos,
    Sin,
    Exp,
    Ln,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Clamp(Var, Rc<DMatrix<f64>>, Rc<DMatrix<f64>>),
    Sum(Var),
    SumRows(Var),
    RowLogSumExp(Var, f64),
    Reshape(Var),
    Columns(Var, usize),
    GraphMix { x: Var, w: Var, n: usize, entries: Arc<[(usize, usize)]> },
}

struct Node {
    value: DMatrix<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<DMatrix<f64>>>,
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn reshape_row_major(m: &DMatrix<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    let src_cols = m.ncols();
    DMatrix::from_fn(rows, cols, |r, c| {
        let k = r * cols + c;
        m[(k / src_cols, k % src_cols)]
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    fn apply(self, z: f64) -> f64 {
        match self {
            Unary::Relu => z.max(0.0),
            Unary::Sigmoid(k) => sigmoid(k * z),
            Unary::Abs => z.abs(),
            Unary::Sqrt => z.max(0.0).sqrt(),
            Unary::Square => z * z,
            Unary::Cos => z.cos(),
            Unary::Sin => z.sin(),
            Unary::Exp => z.exp(),
            Unary::Ln => z.ln(),
        }
    }

    /// Derivative given input `z` and output `y`.
    fn deriv(self, z: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => (z > 0.0) as u8 as f64,
            Unary::Sigmoid(k) => k * y * (1.0 - y),
            Unary::Abs => z.signum() * (z != 0.0) as u8 as f64,
            Unary::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * z,
            Unary::Cos => -z.sin(),
            Unary::Sin => z.cos(),
            Unary::Exp => y,
            Unary::Ln => 1.0 / z,
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.clear();
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Leaf node (parameter or constant).
    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(NnError::ShapeMismatch(format!("matmul {:?} · {:?}", va.shape(), vb.shape())));
        }
        let v = va * vb;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let v = self.value(a).component_mul(self.value(b));
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `a + 1·row`, broadcasting a `1×c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(NnError::ShapeMismatch(format!("add_row {:?} + {:?}", va.shape(), vr.shape())));
        }
        let mut v = va.clone();
        for mut r in v.row_iter_mut() {
            r += vr;
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).add_scalar(k);
        self.push(v, Op::AddScalar(a))
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let v = self.value(a).map(|z| u.apply(z));
        self.push(v, Op::Unary(a, u))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    /// Logistic function with sharpness `k`.
    pub fn sigmoid(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Unary::Sigmoid(k))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    /// Square root; the derivative is taken as zero at the origin.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    /// Elementwise clamp to constant bounds.
    pub fn clamp(&mut self, a: Var, lo: Rc<DMatrix<f64>>, hi: Rc<DMatrix<f64>>) -> Result<Var, NnError> {
        same_shape(self.value(a), &lo, "clamp lower")?;
        same_shape(self.value(a), &hi, "clamp upper")?;
        let v = self.value(a).zip_zip_map(&lo, &hi, |z, l, h| z.max(l).min(h));
        Ok(self.push(v, Op::Clamp(a, lo, hi)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `r×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = DMatrix::from_fn(m.nrows(), 1, |r, _| m.row(r).sum());
        self.push(v, Op::SumRows(a))
    }

    /// Per-row smooth maximum `τ·log Σ_j exp(a_j/τ)`.
    pub fn row_logsumexp(&mut self, a: Var, tau: f64) -> Var {
        let m = self.value(a);
        let v = DMatrix::from_fn(m.nrows(), 1, |r, _| {
            let row = m.row(r);
            let mx = row.max();
            mx + tau * row.iter().map(|z| ((z - mx) / tau).exp()).sum::<f64>().ln()
        });
        self.push(v, Op::RowLogSumExp(a, tau))
    }

    /// Reinterpret in row-major element order.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let m = self.value(a);
        if m.len() != rows * cols {
            return Err(NnError::ShapeMismatch(format!("reshape {:?} to ({rows}, {cols})", m.shape())));
        }
        let v = reshape_row_major(m, rows, cols);
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Columns `start..start+len`.
    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let m = self.value(a);
        if start + len > m.ncols() {
            return Err(NnError::ShapeMismatch(format!("columns {start}..{} of {:?}", start + len, m.shape())));
        }
        let v = m.columns(start, len).into_owned();
        Ok(self.push(v, Op::Columns(a, start)))
    }

    /// Sparse graph filter applied per sample: for a `(B·N)×d` batch `x`,
    /// row `bN+i` of the result is `Σ_k w_k · x[bN+j]` over mask entries
    /// `k = (i, j)`. `w` is `1×nnz`.
    pub fn graph_mix(&mut self, x: Var, w: Var, n: usize, entries: Arc<[(usize, usize)]>) -> Result<Var, NnError> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vw.nrows() != 1 || vw.ncols() != entries.len() || n == 0 || vx.nrows() % n != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "graph_mix x {:?}, w {:?}, {} entries, n = {n}",
                vx.shape(),
                vw.shape(),
                entries.len()
            )));
        }
        let batch = vx.nrows() / n;
        let d = vx.ncols();
        let mut out = DMatrix::zeros(vx.nrows(), d);
        for c in 0..d {
            let xc = vx.column(c);
            let mut oc = out.column_mut(c);
            for b in 0..batch {
                let base = b * n;
                for (k, &(i, j)) in entries.iter().enumerate() {
                    oc[base + i] += vw[(0, k)] * xc[base + j];
                }
            }
        }
        Ok(self.push(out, Op::GraphMix { x, w, n, entries }))
    }

    /// Reverse pass from a `1×1` node. Gradients of every recorded node are
    /// available through [`Graph::grad`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::GraphNotRecorded);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(NnError::ShapeMismatch(format!("loss must be 1×1, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DMatrix::from_element(1, 1, 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut acc = |v: Var, d: DMatrix<f64>| match &mut grads[v.0] {
                Some(x) => *x += d,
                slot => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &g * vb.transpose());
                    acc(*b, va.tr_mul(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g.clone());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, g.component_mul(vb));
                    acc(*b, g.component_mul(va));
                }
                Op::AddRow(a, r) => {
                    acc(*a, g.clone());
                    acc(*r, DMatrix::from_fn(1, g.ncols(), |_, c| g.column(c).sum()));
                }
                Op::Scale(a, k) => acc(*a, &g * *k),
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::Unary(a, u) => {
                    let z = &self.nodes[a.0].value;
                    let d = DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| {
                        g[(r, c)] * u.deriv(z[(r, c)], node.value[(r, c)])
                    });
                    acc(*a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let z = &self.nodes[a.0].value;
                    let d = DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| {
                        let v = z[(r, c)];
                        if v >= lo[(r, c)] && v <= hi[(r, c)] {
                            g[(r, c)]
                        } else {
                            0.0
                        }
                    });
                    acc(*a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(*a, DMatrix::from_element(r, c, g[(0, 0)]));
                }
                Op::SumRows(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(*a, DMatrix::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                Op::RowLogSumExp(a, tau) => {
                    let z = &self.nodes[a.0].value;
                    let d = DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| {
                        g[(r, 0)] * ((z[(r, c)] - node.value[(r, 0)]) / tau).exp()
                    });
                    acc(*a, d);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(*a, reshape_row_major(&g, r, c));
                }
                Op::Columns(a, start) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut d = DMatrix::zeros(r, c);
                    d.columns_mut(*start, g.ncols()).copy_from(&g);
                    acc(*a, d);
                }
                Op::GraphMix { x, w, n, entries } => {
                    let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let batch = vx.nrows() / n;
                    let mut dx = DMatrix::zeros(vx.nrows(), vx.ncols());
                    let mut dw = DMatrix::zeros(1, entries.len());
                    for c in 0..vx.ncols() {
                        let (xc, gc) = (vx.column(c), g.column(c));
                        for b in 0..batch {
                            let base = b * n;
                            for (k, &(i, j)) in entries.iter().enumerate() {
                                dx[(base + j, c)] += vw[(0, k)] * gc[base + i];
                                dw[(0, k)] += gc[base + i] * xc[base + j];
                            }
                        }
                    }
                    acc(*x, dx);
                    acc(*w, dw);
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Result<DMatrix<f64>, NnError> {
        if self.grads.is_empty() || v.0 >= self.nodes.len() {
            return Err(NnError::GraphNotRecorded);
        }
        let (r, c) = self.shape(v);
        Ok(self.grads[v.0].clone().unwrap_or_else(|| DMatrix::zeros(r, c)))
    }
}
