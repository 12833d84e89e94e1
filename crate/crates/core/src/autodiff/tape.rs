//! Matrix-valued reverse-mode tape.
//!
//! Nodes hold dense matrices; scalars are `1 × 1`. The op set is the one the
//! trainers need: dense products, elementwise maps, row gathers for assembling
//! constraint systems, and a ridge-solve node whose adjoint is an extra
//! triangular solve against the stored factorization.

use crate::autodiff::ridge::adjoint_with_factor;
use crate::error::Result;
use crate::linalg::{gemm, ridge_factor_solve, Cholesky, DenseMatrix, DenseVector, Trans};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `out[out_row, :] += coef · inputs[input][row, :]`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowEntry {
    pub out: usize,
    pub input: usize,
    pub row: usize,
    pub coef: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTr(Var, Var),
    TrMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ScaleBy(Var, Var),
    RowScale(Var, Var),
    Sin(Var),
    Cos(Var),
    Tanh(Var),
    Square(Var),
    Softplus(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    VStack(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    RowCombine(Vec<Var>, Vec<RowEntry>),
    Ridge {
        x: Var,
        y: Var,
        lambda: Var,
        factor: Cholesky,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Differentiable input.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = &self.nodes[v.0].value;
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.as_slice()[0]
    }

    fn push_raw(&mut self, value: DenseMatrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: DenseMatrix, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(value, op, needs)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b)).expect("matmul shapes");
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_tr(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_tr(self.value(b)).expect("matmul_tr shapes");
        self.push(value, Op::MatMulTr(a, b), &[a, b])
    }

    /// `aᵀ · b`
    pub fn tr_matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).tr_matmul(self.value(b)).expect("tr_matmul shapes");
        self.push(value, Op::TrMatMul(a, b), &[a, b])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shapes");
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(&p, &q)| f(p, q)).collect();
        DenseMatrix::from_vec(x.rows(), x.cols(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |p, q| p + q);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |p, q| p - q);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |p, q| p * q);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width");
        let mut value = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| c * v);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.push(value, Op::AddConst(a), &[a])
    }

    /// Multiplies `a` by the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let value = self.value(a).map(|v| c * v);
        self.push(value, Op::ScaleBy(a, s), &[a, s])
    }

    /// Scales row `i` of `a` by `v[i]` for an `m × 1` column `v`.
    pub fn row_scale(&mut self, a: Var, v: Var) -> Var {
        let (m, _) = self.shape(a);
        assert_eq!(self.shape(v), (m, 1), "row_scale column");
        let mut value = self.value(a).clone();
        let s = self.value(v).as_slice().to_vec();
        for (i, si) in s.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|x| *x *= si);
        }
        self.push(value, Op::RowScale(a, v), &[a, v])
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sin);
        self.push(value, Op::Sin(a), &[a])
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::cos);
        self.push(value, Op::Cos(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a), &[a])
    }

    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a), &[a])
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum();
        self.push(DenseMatrix::scalar(s), Op::Sum(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = DenseMatrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols rows");
            for r in 0..rows {
                value.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
            }
            off += m.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "vstack cols");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let value = DenseMatrix::from_vec(rows, cols, data).unwrap();
        self.push(value, Op::VStack(parts.to_vec()), parts)
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = DenseMatrix::zeros(rows.len(), src.cols());
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).copy_from_slice(src.row(r));
        }
        self.push(value, Op::SelectRows(a, rows.to_vec()), &[a])
    }

    /// Sparse linear combination of rows drawn from several same-width inputs.
    pub fn row_combine(&mut self, inputs: &[Var], rows: usize, entries: Vec<RowEntry>) -> Var {
        let cols = self.shape(inputs[0]).1;
        let mut value = DenseMatrix::zeros(rows, cols);
        for e in &entries {
            let src = self.value(inputs[e.input]);
            assert_eq!(src.cols(), cols, "row_combine widths");
            let (s, d) = (src.row(e.row), value.row_mut(e.out));
            for (o, v) in d.iter_mut().zip(s) {
                *o += e.coef * v;
            }
        }
        self.push(value, Op::RowCombine(inputs.to_vec(), entries), inputs)
    }

    /// `(λ I + XᵀX)⁻¹ Xᵀ y` with `λ` a `1 × 1` node; returns an `n × 1` column.
    pub fn ridge_solve(&mut self, x: Var, y: Var, lambda: Var) -> Result<Var> {
        let lam = self.scalar(lambda);
        let yv = DenseVector(self.value(y).as_slice().to_vec());
        let sol = ridge_factor_solve(self.value(x), &yv, lam)?;
        let value = DenseMatrix::column(&sol.weights);
        Ok(self.push(
            value,
            Op::Ridge {
                x,
                y,
                lambda,
                factor: sol.factor,
            },
            &[x, y, lambda],
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        assert_eq!(self.shape(output), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DenseMatrix::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    let ga = grad_slot(grads, a, self.shape(a));
                    gemm(1.0, g, Trans::No, self.value(b), Trans::Yes, 1.0, ga);
                }
                if self.wants(b) {
                    let gb = grad_slot(grads, b, self.shape(b));
                    gemm(1.0, self.value(a), Trans::Yes, g, Trans::No, 1.0, gb);
                }
            }
            &Op::MatMulTr(a, b) => {
                if self.wants(a) {
                    let ga = grad_slot(grads, a, self.shape(a));
                    gemm(1.0, g, Trans::No, self.value(b), Trans::No, 1.0, ga);
                }
                if self.wants(b) {
                    let gb = grad_slot(grads, b, self.shape(b));
                    gemm(1.0, g, Trans::Yes, self.value(a), Trans::No, 1.0, gb);
                }
            }
            &Op::TrMatMul(a, b) => {
                if self.wants(a) {
                    let ga = grad_slot(grads, a, self.shape(a));
                    gemm(1.0, self.value(b), Trans::No, g, Trans::Yes, 1.0, ga);
                }
                if self.wants(b) {
                    let gb = grad_slot(grads, b, self.shape(b));
                    gemm(1.0, self.value(a), Trans::No, g, Trans::No, 1.0, gb);
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, g, 1.0);
                self.acc(grads, b, g, 1.0);
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, g, 1.0);
                self.acc(grads, b, g, -1.0);
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let bv = self.value(b);
                    let ga = grad_slot(grads, a, self.shape(a));
                    ew_acc(ga, g, bv, |p, q| p * q);
                }
                if self.wants(b) {
                    let av = self.value(a);
                    let gb = grad_slot(grads, b, self.shape(b));
                    ew_acc(gb, g, av, |p, q| p * q);
                }
            }
            &Op::AddRow(a, row) => {
                self.acc(grads, a, g, 1.0);
                if self.wants(row) {
                    let gr = grad_slot(grads, row, self.shape(row));
                    for r in 0..g.rows() {
                        for (o, v) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            &Op::Scale(a, c) => self.acc(grads, a, g, c),
            &Op::AddConst(a) => self.acc(grads, a, g, 1.0),
            &Op::ScaleBy(a, s) => {
                let c = self.scalar(s);
                self.acc(grads, a, g, c);
                if self.wants(s) {
                    let d: f64 = g
                        .as_slice()
                        .iter()
                        .zip(self.value(a).as_slice())
                        .map(|(p, q)| p * q)
                        .sum();
                    grad_slot(grads, s, (1, 1)).as_mut_slice()[0] += d;
                }
            }
            &Op::RowScale(a, v) => {
                if self.wants(a) {
                    let vs = self.value(v).as_slice();
                    let ga = grad_slot(grads, a, self.shape(a));
                    for (i, &vi) in vs.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(i)) {
                            *o += vi * x;
                        }
                    }
                }
                if self.wants(v) {
                    let av = self.value(a);
                    let gv = grad_slot(grads, v, self.shape(v));
                    for i in 0..av.rows() {
                        let d: f64 = g.row(i).iter().zip(av.row(i)).map(|(p, q)| p * q).sum();
                        gv.as_mut_slice()[i] += d;
                    }
                }
            }
            &Op::Sin(a) => {
                if self.wants(a) {
                    let av = self.value(a);
                    let ga = grad_slot(grads, a, self.shape(a));
                    ew_acc(ga, g, av, |p, z| p * z.cos());
                }
            }
            &Op::Cos(a) => {
                if self.wants(a) {
                    let av = self.value(a);
                    let ga = grad_slot(grads, a, self.shape(a));
                    ew_acc(ga, g, av, |p, z| -p * z.sin());
                }
            }
            &Op::Tanh(a) => {
                if self.wants(a) {
                    let out = &node.value;
                    let ga = grad_slot(grads, a, self.shape(a));
                    ew_acc(ga, g, out, |p, t| p * (1.0 - t * t));
                }
            }
            &Op::Square(a) => {
                if self.wants(a) {
                    let av = self.value(a);
                    let ga = grad_slot(grads, a, self.shape(a));
                    ew_acc(ga, g, av, |p, z| 2.0 * p * z);
                }
            }
            &Op::Softplus(a) => {
                if self.wants(a) {
                    let av = self.value(a);
                    let ga = grad_slot(grads, a, self.shape(a));
                    ew_acc(ga, g, av, |p, z| p * sigmoid(z));
                }
            }
            &Op::Sum(a) => {
                if self.wants(a) {
                    let s = g.as_slice()[0];
                    let ga = grad_slot(grads, a, self.shape(a));
                    ga.as_mut_slice().iter_mut().for_each(|v| *v += s);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.wants(p) {
                        let gp = grad_slot(grads, p, (rows, cols));
                        for r in 0..rows {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + cols]) {
                                *o += v;
                            }
                        }
                    }
                    off += cols;
                }
            }
            Op::VStack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.wants(p) {
                        let gp = grad_slot(grads, p, (rows, cols));
                        let src = &g.as_slice()[off * cols..(off + rows) * cols];
                        for (o, v) in gp.as_mut_slice().iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    off += rows;
                }
            }
            Op::SelectRows(a, rows) => {
                if self.wants(*a) {
                    let ga = grad_slot(grads, *a, self.shape(*a));
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::RowCombine(inputs, entries) => {
                for (k, &inp) in inputs.iter().enumerate() {
                    if !self.wants(inp) {
                        continue;
                    }
                    let gi = grad_slot(grads, inp, self.shape(inp));
                    for e in entries.iter().filter(|e| e.input == k) {
                        for (o, v) in gi.row_mut(e.row).iter_mut().zip(g.row(e.out)) {
                            *o += e.coef * v;
                        }
                    }
                }
            }
            Op::Ridge {
                x,
                y,
                lambda,
                factor,
            } => {
                let xv = self.value(*x);
                let yv = self.value(*y).as_slice();
                let w = node.value.as_slice();
                let cot = adjoint_with_factor(factor, xv, yv, w, g.as_slice())?;
                if self.wants(*x) {
                    grad_slot(grads, *x, xv.shape()).axpy(1.0, &cot.x_bar);
                }
                if self.wants(*y) {
                    let gy = grad_slot(grads, *y, self.shape(*y));
                    for (o, v) in gy.as_mut_slice().iter_mut().zip(cot.y_bar.iter()) {
                        *o += v;
                    }
                }
                if self.wants(*lambda) {
                    grad_slot(grads, *lambda, (1, 1)).as_mut_slice()[0] += cot.lambda_bar;
                }
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<DenseMatrix>], v: Var, g: &DenseMatrix, c: f64) {
        if self.wants(v) {
            grad_slot(grads, v, self.shape(v)).axpy(c, g);
        }
    }
}

fn grad_slot(grads: &mut [Option<DenseMatrix>], v: Var, shape: (usize, usize)) -> &mut DenseMatrix {
    grads[v.0].get_or_insert_with(|| DenseMatrix::zeros(shape.0, shape.1))
}

fn ew_acc(dst: &mut DenseMatrix, g: &DenseMatrix, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) {
    for ((o, &p), &q) in dst
        .as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .zip(other.as_slice())
    {
        *o += f(p, q);
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse of non-positive value");
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-node gradients from [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients(Vec<Option<DenseMatrix>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseMatrix> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: DenseMatrix) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let out = build(&mut tape, x);
        let grads = tape.backward(out).unwrap();
        let g = grads.get(x).cloned().unwrap_or(DenseMatrix::zeros(x0.rows(), x0.cols()));
        let eval = |m: DenseMatrix| {
            let mut t = Tape::new();
            let v = t.param(m);
            let o = build(&mut t, v);
            t.scalar(o)
        };
        let h = 1e-6;
        for k in 0..x0.as_slice().len() {
            let mut p = x0.clone();
            p.as_mut_slice()[k] += h;
            let mut m = x0.clone();
            m.as_mut_slice()[k] -= h;
            let fd = (eval(p) - eval(m)) / (2.0 * h);
            let an = g.as_slice()[k];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "entry {k}: fd {fd} vs tape {an}"
            );
        }
    }

    fn sample(rows: usize, cols: usize, seed: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |r, c| ((r * 7 + c * 3) as f64 * 0.37 + seed).sin())
    }

    #[test]
    fn elementwise_and_products() {
        let b = sample(3, 4, 0.2);
        fd_check(
            move |t, x| {
                let bb = t.constant(b.clone());
                let p = t.matmul_tr(x, bb);
                let s = t.sin(p);
                let c = t.cos(x);
                let q = t.tr_matmul(c, x);
                let q2 = t.tanh(q);
                let a = t.sum(s);
                let z = t.sum(q2);
                let sq = t.square(z);
                t.add(a, sq)
            },
            sample(3, 4, 0.5),
        );
    }

    #[test]
    fn structural_ops() {
        fd_check(
            |t, x| {
                let top = t.select_rows(x, &[2, 0]);
                let both = t.vstack(&[top, x]);
                let wide = t.concat_cols(&[both, both]);
                let col = t.select_rows(x, &[0, 1, 2]);
                let r = t.row_combine(
                    &[x, col],
                    2,
                    vec![
                        RowEntry { out: 0, input: 0, row: 1, coef: 2.0 },
                        RowEntry { out: 1, input: 1, row: 2, coef: -0.5 },
                        RowEntry { out: 1, input: 0, row: 0, coef: 1.5 },
                    ],
                );
                let rr = t.mul(r, r);
                let vcol = t_first_col(t, wide);
                let scaled = t.row_scale(wide, vcol);
                let a = t.sum(rr);
                let b = t.sum(scaled);
                let sp = t.softplus(a);
                let c = t.add_const(b, 3.0);
                let d = t.scale_by(c, sp);
                let e = t.scale(d, 0.3);
                t.sub(e, a)
            },
            sample(3, 2, 0.1),
        );
    }

    fn t_first_col(t: &mut Tape, m: Var) -> Var {
        let (_, cols) = t.shape(m);
        let sel = t.constant(DenseMatrix::from_fn(cols, 1, |r, _| if r == 0 { 1.0 } else { 0.0 }));
        t.matmul(m, sel)
    }

    #[test]
    fn bias_broadcast() {
        let a = sample(4, 3, 0.9);
        fd_check(
            move |t, row| {
                let aa = t.constant(a.clone());
                let z = t.add_row(aa, row);
                let s = t.square(z);
                t.sum(s)
            },
            sample(1, 3, 0.4),
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(DenseMatrix::scalar(2.0));
        let p = t.param(DenseMatrix::scalar(3.0));
        let m = t.mul(c, p);
        let grads = t.backward(m).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().as_slice(), &[2.0]);
    }

    #[test]
    fn softplus_roundtrip() {
        for &y in &[1e-8, 1e-3, 0.5, 1.0, 20.0, 50.0] {
            let x = softplus_inverse(y);
            assert!((softplus(x) - y).abs() <= 1e-12 * y.max(1.0));
        }
    }
}
