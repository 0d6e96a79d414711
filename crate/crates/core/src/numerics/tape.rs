//! Eager tape for reverse-mode differentiation over a fixed op vocabulary.
//!
//! Ops execute as the graph is built, so the value of every node is
//! available immediately; `backward` replays the tape in reverse
//! creation order (a valid reverse topological order, since inputs are
//! always created before outputs). Constants never receive gradients,
//! which is how detached quantities such as the contrastive-term
//! estimate enter a loss without being differentiated through.

use std::sync::Arc;

use super::array::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{NdArray, NumericsError};

/// Epsilon added inside the square root of row l2-normalization so a
/// zero row maps to a zero row instead of NaN.
pub const L2_NORM_EPS: f64 = 1e-12;

/// Epsilon inside the layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Fill value that drives softmax probabilities to exactly zero while
/// keeping every stored value finite.
pub const ATTENTION_MASK_FILL: f64 = -1e30;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Sin(Var),
    Square(Var),
    Gelu(Var),
    MatMul(Var, Var),
    Transpose(Var),
    RowSoftmax(Var),
    LayerNorm(Var),
    L2NormalizeRows(Var),
    MaskedFill(Var, Arc<Vec<bool>>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    ReduceSum(Var),
    ReduceMean(Var),
}

struct Node {
    op: Op,
    value: NdArray,
    requires_grad: bool,
}

/// Records ops eagerly and differentiates scalar outputs with respect
/// to trainable leaves.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    ran_backward: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            ran_backward: false,
        }
    }

    /// Trainable leaf: receives a gradient during backward.
    pub fn param(&mut self, value: NdArray) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Detached leaf: values flow forward, no gradient flows back.
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(NdArray::scalar(value))
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: NdArray, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn finish(
        &mut self,
        op: Op,
        value: NdArray,
        inputs: &[Var],
        name: &'static str,
    ) -> Result<Var, NumericsError> {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        #[cfg(not(debug_assertions))]
        let _ = name;
        let rg = self.needs_grad(inputs);
        Ok(self.push(op, value, rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NumericsError::ShapeMismatch {
                op,
                details: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    // ── elementwise and broadcast ops ───────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += bv;
        }
        self.finish(Op::Add(a, b), out, &[a, b], "add")
    }

    /// a + row, broadcasting a 1 x n row over every row of a.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                details: format!("{:?} + {:?}", av.shape(), rv.shape()),
            });
        }
        let n = av.cols();
        let mut out = av.clone();
        let rdata = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &r) in chunk.iter_mut().zip(&rdata) {
                *o += r;
            }
        }
        self.finish(Op::AddRow(a, row), out, &[a, row], "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= bv;
        }
        self.finish(Op::Mul(a, b), out, &[a, b], "mul")
    }

    /// a * row, broadcasting a 1 x n row over every row of a.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_row",
                details: format!("{:?} * {:?}", av.shape(), rv.shape()),
            });
        }
        let n = av.cols();
        let mut out = av.clone();
        let rdata = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &r) in chunk.iter_mut().zip(&rdata) {
                *o *= r;
            }
        }
        self.finish(Op::MulRow(a, row), out, &[a, row], "mul_row")
    }

    /// Scales row i of a by col[i]; col is m x 1.
    pub fn scale_rows(&mut self, a: Var, col: Var) -> Result<Var, NumericsError> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "scale_rows",
                details: format!("{:?} scaled by {:?}", av.shape(), cv.shape()),
            });
        }
        let n = av.cols();
        let mut out = av.clone();
        let cdata = self.value(col).data().to_vec();
        for (i, chunk) in out.data_mut().chunks_mut(n).enumerate() {
            for o in chunk.iter_mut() {
                *o *= cdata[i];
            }
        }
        self.finish(Op::ScaleRows(a, col), out, &[a, col], "scale_rows")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o *= c;
        }
        self.finish(Op::Scale(a, c), out, &[a], "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = -*o;
        }
        self.finish(Op::Neg(a), out, &[a], "negate")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = o.exp();
        }
        self.finish(Op::Exp(a), out, &[a], "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, NumericsError> {
        if let Some(&bad) = self.value(a).data().iter().find(|v| **v <= 0.0) {
            return Err(NumericsError::LnDomain { value: bad });
        }
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = o.ln();
        }
        self.finish(Op::Ln(a), out, &[a], "ln")
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = o.sin();
        }
        self.finish(Op::Sin(a), out, &[a], "sin")
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = *o * *o;
        }
        self.finish(Op::Square(a), out, &[a], "square")
    }

    /// Smooth gelu (tanh form), the nonlinearity of the feed-forward
    /// blocks. Smoothness keeps central-difference checks meaningful.
    pub fn gelu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = gelu_forward(*o);
        }
        self.finish(Op::Gelu(a), out, &[a], "gelu")
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                details: format!("{:?} x {:?}", av.shape(), bv.shape()),
            });
        }
        let mut out = vec![0.0; av.rows() * bv.cols()];
        matmul_into(av, bv, &mut out);
        let out = NdArray::new(vec![av.rows(), bv.cols()], out)?;
        self.finish(Op::MatMul(a, b), out, &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av.get(i, j);
            }
        }
        let out = NdArray::new(vec![n, m], out)?;
        self.finish(Op::Transpose(a), out, &[a], "transpose")
    }

    // ── row-structured ops ──────────────────────────────────────────

    /// Softmax along each row, max-shifted for stability.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let n = av.cols();
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in chunk.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in chunk.iter_mut() {
                *v /= sum;
            }
        }
        self.finish(Op::RowSoftmax(a), out, &[a], "row_softmax")
    }

    /// Standardizes each row to zero mean, unit variance.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let n = av.cols();
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            let (mean, inv_std) = row_moments(chunk);
            for v in chunk.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
        }
        self.finish(Op::LayerNorm(a), out, &[a], "layer_normalize")
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let n = av.cols();
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            let norm = (chunk.iter().map(|v| v * v).sum::<f64>() + L2_NORM_EPS).sqrt();
            for v in chunk.iter_mut() {
                *v /= norm;
            }
        }
        self.finish(Op::L2NormalizeRows(a), out, &[a], "l2_normalize_rows")
    }

    /// Replaces entries where mask is true with `fill`; gradient there
    /// is exactly zero.
    pub fn masked_fill(
        &mut self,
        a: Var,
        mask: Arc<Vec<bool>>,
        fill: f64,
    ) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_fill",
                details: format!("mask len {} vs {:?}", mask.len(), av.shape()),
            });
        }
        let mut out = av.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(mask.iter()) {
            if m {
                *o = fill;
            }
        }
        self.finish(Op::MaskedFill(a, mask), out, &[a], "masked_fill")
    }

    // ── reshaping ───────────────────────────────────────────────────

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Contract {
                op: "concat",
                details: "no inputs".into(),
            });
        }
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            if self.value(p).cols() != n {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    details: "column counts differ".into(),
                });
            }
            rows += self.value(p).rows();
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = NdArray::new(vec![rows, n], data)?;
        self.finish(Op::ConcatRows(parts.to_vec()), out, parts, "concat")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Contract {
                op: "concat",
                details: "no inputs".into(),
            });
        }
        let m = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    details: "row counts differ".into(),
                });
            }
            cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(m * cols);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let out = NdArray::new(vec![m, cols], data)?;
        self.finish(Op::ConcatCols(parts.to_vec()), out, parts, "concat")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if start >= end || end > av.rows() {
            return Err(NumericsError::Contract {
                op: "slice",
                details: format!("rows {start}..{end} of {:?}", av.shape()),
            });
        }
        let n = av.cols();
        let data = av.data()[start * n..end * n].to_vec();
        let out = NdArray::new(vec![end - start, n], data)?;
        self.finish(Op::SliceRows(a, start, end), out, &[a], "slice")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if start >= end || end > av.cols() {
            return Err(NumericsError::Contract {
                op: "slice",
                details: format!("cols {start}..{end} of {:?}", av.shape()),
            });
        }
        let mut data = Vec::with_capacity(av.rows() * (end - start));
        for i in 0..av.rows() {
            data.extend_from_slice(&av.row_slice(i)[start..end]);
        }
        let out = NdArray::new(vec![av.rows(), end - start], data)?;
        self.finish(Op::SliceCols(a, start, end), out, &[a], "slice")
    }

    /// Row lookup (embedding gather); backward scatter-adds into the
    /// table rows.
    pub fn gather_rows(&mut self, table: Var, indices: Arc<Vec<usize>>) -> Result<Var, NumericsError> {
        let tv = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= tv.rows()) {
            return Err(NumericsError::Contract {
                op: "gather",
                details: format!("index {bad} out of range for {} rows", tv.rows()),
            });
        }
        let n = tv.cols();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices.iter() {
            data.extend_from_slice(tv.row_slice(i));
        }
        let out = NdArray::new(vec![indices.len(), n], data)?;
        self.finish(Op::GatherRows(table, indices), out, &[table], "gather")
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.finish(Op::ReduceSum(a), NdArray::scalar(s), &[a], "reduce_sum")
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let s: f64 = av.data().iter().sum();
        let m = s / av.len() as f64;
        self.finish(Op::ReduceMean(a), NdArray::scalar(m), &[a], "reduce_mean")
    }

    // ── backward ────────────────────────────────────────────────────

    /// Backpropagates from a scalar root with seed 1.
    pub fn backward(&mut self, root: Var) -> Result<(), NumericsError> {
        if self.value(root).len() != 1 {
            return Err(NumericsError::Contract {
                op: "backward",
                details: format!("root must be scalar, got {:?}", self.value(root).shape()),
            });
        }
        let seed = NdArray::scalar(1.0);
        self.backward_seeded(&[(root, seed)])
    }

    /// Backpropagates from several roots at once, each with an explicit
    /// upstream gradient. Used to stitch per-sequence graphs to a batch
    /// objective graph.
    pub fn backward_seeded(&mut self, seeds: &[(Var, NdArray)]) -> Result<(), NumericsError> {
        for g in self.grads.iter_mut() {
            *g = None;
        }
        for (v, seed) in seeds {
            if seed.shape() != self.nodes[v.0].value.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "backward",
                    details: format!(
                        "seed {:?} vs node {:?}",
                        seed.shape(),
                        self.nodes[v.0].value.shape()
                    ),
                });
            }
            if self.nodes[v.0].requires_grad {
                let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; seed.len()]);
                for (s, &g) in slot.iter_mut().zip(seed.data()) {
                    *s += g;
                }
            }
        }
        for idx in (0..self.nodes.len()).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx);
        }
        self.ran_backward = true;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<NdArray, NumericsError> {
        if !self.ran_backward {
            return Err(NumericsError::GradNotComputed);
        }
        if !self.nodes[v.0].requires_grad {
            return Err(NumericsError::Contract {
                op: "grad",
                details: "node is a detached constant".into(),
            });
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => NdArray::new(shape, g.clone()),
            None => Ok(NdArray::new(
                shape.clone(),
                vec![0.0; shape.iter().product()],
            )?),
        }
    }

    fn accum(&mut self, v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        for (s, &c) in slot.iter_mut().zip(contrib) {
            *s += c;
        }
    }

    fn propagate(&mut self, idx: usize) {
        let go = self.grads[idx].take().expect("grad present");
        // Put it back so grad() can read it after backward.
        self.grads[idx] = Some(go.clone());
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, &go);
                self.accum(b, &go);
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                let n = self.nodes[row.0].value.len();
                let mut rg = vec![0.0; n];
                for chunk in go.chunks(n) {
                    for (r, &g) in rg.iter_mut().zip(chunk) {
                        *r += g;
                    }
                }
                self.accum(a, &go);
                self.accum(row, &rg);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                let da: Vec<f64> = go.iter().zip(&bv).map(|(g, b)| g * b).collect();
                let db: Vec<f64> = go.iter().zip(&av).map(|(g, a)| g * a).collect();
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::MulRow(a, row) => {
                let (a, row) = (*a, *row);
                let n = self.nodes[row.0].value.len();
                let rv = self.nodes[row.0].value.data().to_vec();
                let av = self.nodes[a.0].value.data().to_vec();
                let mut da = vec![0.0; av.len()];
                let mut dr = vec![0.0; n];
                for (ci, chunk) in go.chunks(n).enumerate() {
                    for (j, &g) in chunk.iter().enumerate() {
                        da[ci * n + j] = g * rv[j];
                        dr[j] += g * av[ci * n + j];
                    }
                }
                self.accum(a, &da);
                self.accum(row, &dr);
            }
            Op::ScaleRows(a, col) => {
                let (a, col) = (*a, *col);
                let av = self.nodes[a.0].value.data().to_vec();
                let cv = self.nodes[col.0].value.data().to_vec();
                let n = av.len() / cv.len();
                let mut da = vec![0.0; av.len()];
                let mut dc = vec![0.0; cv.len()];
                for (i, chunk) in go.chunks(n).enumerate() {
                    for (j, &g) in chunk.iter().enumerate() {
                        da[i * n + j] = g * cv[i];
                        dc[i] += g * av[i * n + j];
                    }
                }
                self.accum(a, &da);
                self.accum(col, &dc);
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                let da: Vec<f64> = go.iter().map(|g| g * c).collect();
                self.accum(a, &da);
            }
            Op::Neg(a) => {
                let a = *a;
                let da: Vec<f64> = go.iter().map(|g| -g).collect();
                self.accum(a, &da);
            }
            Op::Exp(a) => {
                let a = *a;
                let out = self.nodes[idx].value.data().to_vec();
                let da: Vec<f64> = go.iter().zip(&out).map(|(g, o)| g * o).collect();
                self.accum(a, &da);
            }
            Op::Ln(a) => {
                let a = *a;
                let av = self.nodes[a.0].value.data().to_vec();
                let da: Vec<f64> = go.iter().zip(&av).map(|(g, x)| g / x).collect();
                self.accum(a, &da);
            }
            Op::Sin(a) => {
                let a = *a;
                let av = self.nodes[a.0].value.data().to_vec();
                let da: Vec<f64> = go.iter().zip(&av).map(|(g, x)| g * x.cos()).collect();
                self.accum(a, &da);
            }
            Op::Square(a) => {
                let a = *a;
                let av = self.nodes[a.0].value.data().to_vec();
                let da: Vec<f64> = go.iter().zip(&av).map(|(g, x)| g * 2.0 * x).collect();
                self.accum(a, &da);
            }
            Op::Gelu(a) => {
                let a = *a;
                let av = self.nodes[a.0].value.data().to_vec();
                let da: Vec<f64> = go
                    .iter()
                    .zip(&av)
                    .map(|(g, x)| g * gelu_derivative(*x))
                    .collect();
                self.accum(a, &da);
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let g = NdArray::new(vec![av.rows(), bv.cols()], go.clone()).expect("shape");
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; av.len()];
                    matmul_nt_into(&g, &bv, &mut da);
                    self.accum(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; bv.len()];
                    matmul_tn_into(&av, &g, &mut db);
                    self.accum(b, &db);
                }
            }
            Op::Transpose(a) => {
                let a = *a;
                let (n, m) = {
                    let v = &self.nodes[idx].value;
                    (v.rows(), v.cols())
                };
                let mut da = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = go[i * m + j];
                    }
                }
                self.accum(a, &da);
            }
            Op::RowSoftmax(a) => {
                let a = *a;
                let out = self.nodes[idx].value.clone();
                let n = out.cols();
                let mut da = vec![0.0; out.len()];
                for (i, (gchunk, pchunk)) in
                    go.chunks(n).zip(out.data().chunks(n)).enumerate()
                {
                    let dot: f64 = gchunk.iter().zip(pchunk).map(|(g, p)| g * p).sum();
                    for j in 0..n {
                        da[i * n + j] = pchunk[j] * (gchunk[j] - dot);
                    }
                }
                self.accum(a, &da);
            }
            Op::LayerNorm(a) => {
                let a = *a;
                let av = self.nodes[a.0].value.clone();
                let out = self.nodes[idx].value.clone();
                let n = av.cols();
                let mut da = vec![0.0; av.len()];
                for i in 0..av.rows() {
                    let (_, inv_std) = row_moments(av.row_slice(i));
                    let g = &go[i * n..(i + 1) * n];
                    let y = out.row_slice(i);
                    let g_mean: f64 = g.iter().sum::<f64>() / n as f64;
                    let gy_mean: f64 =
                        g.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / n as f64;
                    for j in 0..n {
                        da[i * n + j] = inv_std * (g[j] - g_mean - y[j] * gy_mean);
                    }
                }
                self.accum(a, &da);
            }
            Op::L2NormalizeRows(a) => {
                let a = *a;
                let av = self.nodes[a.0].value.clone();
                let n = av.cols();
                let mut da = vec![0.0; av.len()];
                for i in 0..av.rows() {
                    let x = av.row_slice(i);
                    let g = &go[i * n..(i + 1) * n];
                    let norm = (x.iter().map(|v| v * v).sum::<f64>() + L2_NORM_EPS).sqrt();
                    let gx: f64 = g.iter().zip(x).map(|(g, x)| g * x).sum();
                    for j in 0..n {
                        da[i * n + j] = g[j] / norm - x[j] * gx / (norm * norm * norm);
                    }
                }
                self.accum(a, &da);
            }
            Op::MaskedFill(a, mask) => {
                let a = *a;
                let mask = Arc::clone(mask);
                let da: Vec<f64> = go
                    .iter()
                    .zip(mask.iter())
                    .map(|(g, &m)| if m { 0.0 } else { *g })
                    .collect();
                self.accum(a, &da);
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    let slice = go[offset..offset + len].to_vec();
                    self.accum(p, &slice);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let m = self.nodes[idx].value.rows();
                let total = self.nodes[idx].value.cols();
                let widths: Vec<usize> =
                    parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
                let mut col_off = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    let mut dp = vec![0.0; m * w];
                    for i in 0..m {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&go[i * total + col_off..i * total + col_off + w]);
                    }
                    self.accum(*p, &dp);
                    col_off += w;
                }
            }
            Op::SliceRows(a, start, end) => {
                let (a, start, end) = (*a, *start, *end);
                let n = self.nodes[a.0].value.cols();
                let mut da = vec![0.0; self.nodes[a.0].value.len()];
                da[start * n..end * n].copy_from_slice(&go);
                self.accum(a, &da);
            }
            Op::SliceCols(a, start, end) => {
                let (a, start, end) = (*a, *start, *end);
                let (m, n) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                let w = end - start;
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n + start..i * n + end].copy_from_slice(&go[i * w..(i + 1) * w]);
                }
                self.accum(a, &da);
            }
            Op::GatherRows(table, indices) => {
                let table = *table;
                let indices = Arc::clone(indices);
                let n = self.nodes[table.0].value.cols();
                let mut dt = vec![0.0; self.nodes[table.0].value.len()];
                for (pos, &row) in indices.iter().enumerate() {
                    for j in 0..n {
                        dt[row * n + j] += go[pos * n + j];
                    }
                }
                self.accum(table, &dt);
            }
            Op::ReduceSum(a) => {
                let a = *a;
                let g = go[0];
                let da = vec![g; self.nodes[a.0].value.len()];
                self.accum(a, &da);
            }
            Op::ReduceMean(a) => {
                let a = *a;
                let len = self.nodes[a.0].value.len();
                let g = go[0] / len as f64;
                let da = vec![g; len];
                self.accum(a, &da);
            }
        }
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_forward(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
