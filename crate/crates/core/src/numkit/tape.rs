//! Wengert-tape reverse-mode differentiation over dense f64 buffers.
//!
//! Every operation records its inputs and output as indices into an arena of
//! value buffers; `backward` replays the tape in reverse and accumulates
//! adjoints. Sparse matrices enter only through `spmm` and are constants:
//! gradients flow through the dense operand alone.
//!
//! The op set is deliberately small. Broadcast variants (`add_row_broadcast`,
//! `mul_col_broadcast`) and pure plumbing (`reshape`, `scale`, column/row
//! selection) exist so bias rows, attention weights, and listwise losses can
//! be wired without any further math primitives.

use std::rc::Rc;

use super::dense::DenseMatrix;
use super::sparse::SparseMatrix;

pub type BufId = usize;

enum TapeOp {
    MatMul { a: BufId, b: BufId, out: BufId },
    SpMM { s: Rc<SparseMatrix>, x: BufId, out: BufId },
    Add { a: BufId, b: BufId, out: BufId },
    AddRowBroadcast { a: BufId, bias: BufId, out: BufId },
    Mul { a: BufId, b: BufId, out: BufId },
    MulColBroadcast { a: BufId, s: BufId, out: BufId },
    Scale { a: BufId, c: f64, out: BufId },
    Tanh { a: BufId, out: BufId },
    Sigmoid { a: BufId, out: BufId },
    Relu { a: BufId, out: BufId },
    SoftmaxRows { a: BufId, out: BufId },
    ConcatCols { parts: Vec<BufId>, out: BufId },
    SelectRows { a: BufId, idx: Vec<usize>, out: BufId },
    SelectCol { a: BufId, col: usize, out: BufId },
    Reshape { a: BufId, out: BufId },
    Sum { a: BufId, out: BufId },
    Log { a: BufId, out: BufId },
}

pub struct Tape {
    values: Vec<DenseMatrix>,
    needs_grad: Vec<bool>,
    ops: Vec<TapeOp>,
}

pub struct Gradients {
    by_buf: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, id: BufId) -> Option<&DenseMatrix> {
        self.by_buf.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a buffer, densified to zeros when the buffer never
    /// influenced the loss.
    pub fn take_or_zeros(&mut self, id: BufId, rows: usize, cols: usize) -> DenseMatrix {
        match self.by_buf.get_mut(id).and_then(|g| g.take()) {
            Some(g) => {
                assert_eq!((g.rows(), g.cols()), (rows, cols), "gradient shape mismatch");
                g
            }
            None => DenseMatrix::zeros(rows, cols),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { values: Vec::new(), needs_grad: Vec::new(), ops: Vec::new() }
    }

    fn push(&mut self, value: DenseMatrix, needs_grad: bool) -> BufId {
        self.values.push(value);
        self.needs_grad.push(needs_grad);
        self.values.len() - 1
    }

    /// Leaf that never receives a gradient (inputs, masks, literals).
    pub fn constant(&mut self, m: DenseMatrix) -> BufId {
        self.push(m, false)
    }

    /// Leaf whose gradient is kept (trainable weights).
    pub fn param(&mut self, m: DenseMatrix) -> BufId {
        self.push(m, true)
    }

    pub fn value(&self, id: BufId) -> &DenseMatrix {
        &self.values[id]
    }

    pub fn shape(&self, id: BufId) -> (usize, usize) {
        (self.values[id].rows(), self.values[id].cols())
    }

    fn flows(&self, inputs: &[BufId]) -> bool {
        inputs.iter().any(|&i| self.needs_grad[i])
    }

    pub fn matmul(&mut self, a: BufId, b: BufId) -> BufId {
        let v = self.values[a].matmul(&self.values[b]);
        let out = self.push(v, self.flows(&[a, b]));
        self.ops.push(TapeOp::MatMul { a, b, out });
        out
    }

    pub fn spmm(&mut self, s: &Rc<SparseMatrix>, x: BufId) -> BufId {
        let v = s.spmm(&self.values[x]);
        let out = self.push(v, self.needs_grad[x]);
        self.ops.push(TapeOp::SpMM { s: Rc::clone(s), x, out });
        out
    }

    pub fn add(&mut self, a: BufId, b: BufId) -> BufId {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()), "add shape mismatch");
        let mut v = va.clone();
        v.add_assign(vb);
        let out = self.push(v, self.flows(&[a, b]));
        self.ops.push(TapeOp::Add { a, b, out });
        out
    }

    /// a (n x m) + bias (1 x m) broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: BufId, bias: BufId) -> BufId {
        let (va, vb) = (&self.values[a], &self.values[bias]);
        assert_eq!(vb.rows(), 1, "bias must be a single row");
        assert_eq!(va.cols(), vb.cols(), "bias width mismatch");
        let mut v = va.clone();
        for r in 0..v.rows() {
            let bias_row: Vec<f64> = vb.row(0).to_vec();
            for (x, b) in v.row_mut(r).iter_mut().zip(&bias_row) {
                *x += b;
            }
        }
        let out = self.push(v, self.flows(&[a, bias]));
        self.ops.push(TapeOp::AddRowBroadcast { a, bias, out });
        out
    }

    pub fn mul(&mut self, a: BufId, b: BufId) -> BufId {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = DenseMatrix::from_vec(va.rows(), va.cols(), data);
        let out = self.push(v, self.flows(&[a, b]));
        self.ops.push(TapeOp::Mul { a, b, out });
        out
    }

    /// a (n x m) with row i scaled by s[i, 0]; s is n x 1.
    pub fn mul_col_broadcast(&mut self, a: BufId, s: BufId) -> BufId {
        let (va, vs) = (&self.values[a], &self.values[s]);
        assert_eq!(vs.cols(), 1, "scaler must be a single column");
        assert_eq!(va.rows(), vs.rows(), "scaler height mismatch");
        let mut v = va.clone();
        for r in 0..v.rows() {
            let c = vs.get(r, 0);
            for x in v.row_mut(r) {
                *x *= c;
            }
        }
        let out = self.push(v, self.flows(&[a, s]));
        self.ops.push(TapeOp::MulColBroadcast { a, s, out });
        out
    }

    pub fn scale(&mut self, a: BufId, c: f64) -> BufId {
        let v = self.values[a].map(|x| c * x);
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::Scale { a, c, out });
        out
    }

    pub fn tanh(&mut self, a: BufId) -> BufId {
        let v = self.values[a].map(f64::tanh);
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::Tanh { a, out });
        out
    }

    pub fn sigmoid(&mut self, a: BufId) -> BufId {
        let v = self.values[a].map(|x| 1.0 / (1.0 + (-x).exp()));
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::Sigmoid { a, out });
        out
    }

    pub fn relu(&mut self, a: BufId) -> BufId {
        let v = self.values[a].map(|x| x.max(0.0));
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::Relu { a, out });
        out
    }

    /// Row-wise softmax, max-shifted before exponentiation.
    pub fn softmax_rows(&mut self, a: BufId) -> BufId {
        let va = &self.values[a];
        assert!(va.cols() > 0, "softmax over empty rows");
        let mut v = va.clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::SoftmaxRows { a, out });
        out
    }

    pub fn concat_cols(&mut self, parts: &[BufId]) -> BufId {
        assert!(!parts.is_empty());
        let rows = self.values[parts[0]].rows();
        let total: usize = parts.iter().map(|&p| self.values[p].cols()).sum();
        let mut v = DenseMatrix::zeros(rows, total);
        let mut at = 0;
        for &p in parts {
            let vp = &self.values[p];
            assert_eq!(vp.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                let src = vp.row(r).to_vec();
                v.row_mut(r)[at..at + src.len()].copy_from_slice(&src);
            }
            at += vp.cols();
        }
        let out = self.push(v, self.flows(parts));
        self.ops.push(TapeOp::ConcatCols { parts: parts.to_vec(), out });
        out
    }

    /// Gather rows by index; indices may repeat.
    pub fn select_rows(&mut self, a: BufId, idx: Vec<usize>) -> BufId {
        let va = &self.values[a];
        let mut v = DenseMatrix::zeros(idx.len(), va.cols());
        for (k, &src) in idx.iter().enumerate() {
            assert!(src < va.rows(), "row index {src} out of {}", va.rows());
            let row = va.row(src).to_vec();
            v.row_mut(k).copy_from_slice(&row);
        }
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::SelectRows { a, idx, out });
        out
    }

    pub fn select_col(&mut self, a: BufId, col: usize) -> BufId {
        let va = &self.values[a];
        assert!(col < va.cols());
        let data = (0..va.rows()).map(|r| va.get(r, col)).collect();
        let v = DenseMatrix::from_vec(va.rows(), 1, data);
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::SelectCol { a, col, out });
        out
    }

    /// Same data, new shape. Row-major order is preserved, so an n x 1 column
    /// reshaped to 1 x n is a transpose for free.
    pub fn reshape(&mut self, a: BufId, rows: usize, cols: usize) -> BufId {
        let va = &self.values[a];
        assert_eq!(va.rows() * va.cols(), rows * cols, "reshape element count mismatch");
        let v = DenseMatrix::from_vec(rows, cols, va.data().to_vec());
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::Reshape { a, out });
        out
    }

    pub fn sum(&mut self, a: BufId) -> BufId {
        let total: f64 = self.values[a].data().iter().sum();
        let v = DenseMatrix::from_vec(1, 1, vec![total]);
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::Sum { a, out });
        out
    }

    pub fn log(&mut self, a: BufId) -> BufId {
        let v = self.values[a].map(f64::ln);
        let out = self.push(v, self.needs_grad[a]);
        self.ops.push(TapeOp::Log { a, out });
        out
    }

    /// Reverse sweep from a scalar loss buffer.
    pub fn backward(&self, loss: BufId) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "loss must be 1x1");
        assert!(self.needs_grad[loss], "loss does not depend on any parameter");
        let mut g: Vec<Option<DenseMatrix>> = vec![None; self.values.len()];
        g[loss] = Some(DenseMatrix::from_vec(1, 1, vec![1.0]));

        for op in self.ops.iter().rev() {
            match op {
                TapeOp::MatMul { a, b, out } => {
                    let Some(d) = g[*out].clone() else { continue };
                    if self.needs_grad[*a] {
                        let da = d.matmul(&self.values[*b].transpose());
                        accumulate(&mut g, *a, da);
                    }
                    if self.needs_grad[*b] {
                        let db = self.values[*a].transpose().matmul(&d);
                        accumulate(&mut g, *b, db);
                    }
                }
                TapeOp::SpMM { s, x, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if self.needs_grad[*x] {
                        let dx = s.spmm_transposed(d);
                        accumulate(&mut g, *x, dx);
                    }
                }
                TapeOp::Add { a, b, out } => {
                    let Some(d) = g[*out].clone() else { continue };
                    if self.needs_grad[*a] {
                        accumulate(&mut g, *a, d.clone());
                    }
                    if self.needs_grad[*b] {
                        accumulate(&mut g, *b, d);
                    }
                }
                TapeOp::AddRowBroadcast { a, bias, out } => {
                    let Some(d) = g[*out].clone() else { continue };
                    if self.needs_grad[*bias] {
                        let mut db = DenseMatrix::zeros(1, d.cols());
                        for r in 0..d.rows() {
                            let row = d.row(r).to_vec();
                            for (acc, x) in db.row_mut(0).iter_mut().zip(&row) {
                                *acc += x;
                            }
                        }
                        accumulate(&mut g, *bias, db);
                    }
                    if self.needs_grad[*a] {
                        accumulate(&mut g, *a, d);
                    }
                }
                TapeOp::Mul { a, b, out } => {
                    let Some(d) = g[*out].clone() else { continue };
                    if self.needs_grad[*a] {
                        let da = hadamard(&d, &self.values[*b]);
                        accumulate(&mut g, *a, da);
                    }
                    if self.needs_grad[*b] {
                        let db = hadamard(&d, &self.values[*a]);
                        accumulate(&mut g, *b, db);
                    }
                }
                TapeOp::MulColBroadcast { a, s, out } => {
                    let Some(d) = g[*out].clone() else { continue };
                    let (va, vs) = (&self.values[*a], &self.values[*s]);
                    if self.needs_grad[*a] {
                        let mut da = d.clone();
                        for r in 0..da.rows() {
                            let c = vs.get(r, 0);
                            for x in da.row_mut(r) {
                                *x *= c;
                            }
                        }
                        accumulate(&mut g, *a, da);
                    }
                    if self.needs_grad[*s] {
                        let mut ds = DenseMatrix::zeros(vs.rows(), 1);
                        for r in 0..va.rows() {
                            let dot: f64 =
                                d.row(r).iter().zip(va.row(r)).map(|(x, y)| x * y).sum();
                            ds.set(r, 0, dot);
                        }
                        accumulate(&mut g, *s, ds);
                    }
                }
                TapeOp::Scale { a, c, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if self.needs_grad[*a] {
                        let da = d.map(|x| c * x);
                        accumulate(&mut g, *a, da);
                    }
                }
                TapeOp::Tanh { a, out } => {
                    self.unary_backward(&mut g, *a, *out, |y, d| d * (1.0 - y * y));
                }
                TapeOp::Sigmoid { a, out } => {
                    self.unary_backward(&mut g, *a, *out, |y, d| d * y * (1.0 - y));
                }
                TapeOp::Relu { a, out } => {
                    self.unary_backward(&mut g, *a, *out, |y, d| if y > 0.0 { d } else { 0.0 });
                }
                TapeOp::SoftmaxRows { a, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if !self.needs_grad[*a] {
                        continue;
                    }
                    let p = &self.values[*out];
                    let mut da = DenseMatrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let dot: f64 = d.row(r).iter().zip(p.row(r)).map(|(x, y)| x * y).sum();
                        let (dr, pr) = (d.row(r).to_vec(), p.row(r).to_vec());
                        for (j, x) in da.row_mut(r).iter_mut().enumerate() {
                            *x = pr[j] * (dr[j] - dot);
                        }
                    }
                    accumulate(&mut g, *a, da);
                }
                TapeOp::ConcatCols { parts, out } => {
                    let Some(d) = g[*out].clone() else { continue };
                    let mut at = 0;
                    for &p in parts {
                        let w = self.values[p].cols();
                        if self.needs_grad[p] {
                            let mut dp = DenseMatrix::zeros(d.rows(), w);
                            for r in 0..d.rows() {
                                let src = d.row(r)[at..at + w].to_vec();
                                dp.row_mut(r).copy_from_slice(&src);
                            }
                            accumulate(&mut g, p, dp);
                        }
                        at += w;
                    }
                }
                TapeOp::SelectRows { a, idx, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if !self.needs_grad[*a] {
                        continue;
                    }
                    let va = &self.values[*a];
                    let mut da = DenseMatrix::zeros(va.rows(), va.cols());
                    for (k, &src) in idx.iter().enumerate() {
                        let row = d.row(k).to_vec();
                        for (x, y) in da.row_mut(src).iter_mut().zip(&row) {
                            *x += y;
                        }
                    }
                    accumulate(&mut g, *a, da);
                }
                TapeOp::SelectCol { a, col, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if !self.needs_grad[*a] {
                        continue;
                    }
                    let va = &self.values[*a];
                    let mut da = DenseMatrix::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        da.set(r, *col, d.get(r, 0));
                    }
                    accumulate(&mut g, *a, da);
                }
                TapeOp::Reshape { a, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if self.needs_grad[*a] {
                        let va = &self.values[*a];
                        let da = DenseMatrix::from_vec(va.rows(), va.cols(), d.data().to_vec());
                        accumulate(&mut g, *a, da);
                    }
                }
                TapeOp::Sum { a, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if self.needs_grad[*a] {
                        let va = &self.values[*a];
                        let da = DenseMatrix::filled(va.rows(), va.cols(), d.get(0, 0));
                        accumulate(&mut g, *a, da);
                    }
                }
                TapeOp::Log { a, out } => {
                    let Some(d) = g[*out].as_ref() else { continue };
                    if self.needs_grad[*a] {
                        let va = &self.values[*a];
                        let data = d.data().iter().zip(va.data()).map(|(dv, x)| dv / x).collect();
                        let da = DenseMatrix::from_vec(va.rows(), va.cols(), data);
                        accumulate(&mut g, *a, da);
                    }
                }
            }
        }
        Gradients { by_buf: g }
    }

    fn unary_backward(
        &self,
        g: &mut Vec<Option<DenseMatrix>>,
        a: BufId,
        out: BufId,
        df: impl Fn(f64, f64) -> f64,
    ) {
        let Some(d) = g[out].as_ref() else { return };
        if !self.needs_grad[a] {
            return;
        }
        let y = &self.values[out];
        let data = y.data().iter().zip(d.data()).map(|(&yv, &dv)| df(yv, dv)).collect();
        let da = DenseMatrix::from_vec(y.rows(), y.cols(), data);
        accumulate(g, a, da);
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn accumulate(g: &mut [Option<DenseMatrix>], id: BufId, delta: DenseMatrix) {
    match &mut g[id] {
        Some(acc) => acc.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}

fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    DenseMatrix::from_vec(a.rows(), a.cols(), data)
}

/// Stable softmax of one slice, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}
