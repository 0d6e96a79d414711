//! Dense row-major arrays of f64.

use super::NumericsError;

/// A dense array with explicit shape. Everything the encoder and the
/// objectives touch is rank 1 or 2; scalars are stored as `[1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::Contract {
                op: "NdArray::new",
                details: format!("zero-sized dimension in shape {shape:?}"),
            });
        }
        if n != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "NdArray::new",
                details: format!("shape {shape:?} wants {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// 1 x n row vector.
    pub fn row(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// n x 1 column vector.
    pub fn col(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::ShapeMismatch {
                op: "NdArray::from_rows",
                details: "ragged rows".into(),
            });
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Value of a 1x1 array.
    pub fn item(&self) -> Result<f64, NumericsError> {
        if self.data.len() != 1 {
            return Err(NumericsError::Contract {
                op: "NdArray::item",
                details: format!("expected scalar, got shape {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// c += a * b for row-major matrices, ikj order so the inner loop runs
/// over contiguous slices.
pub(crate) fn matmul_into(a: &NdArray, b: &NdArray, out: &mut [f64]) {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out += g * b^T where g is m x n and b is k x n; out is m x k.
pub(crate) fn matmul_nt_into(g: &NdArray, b: &NdArray, out: &mut [f64]) {
    let (m, n) = (g.rows(), g.cols());
    let k = b.rows();
    debug_assert_eq!(b.cols(), n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let grow = &g.data[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (gv, bv) in grow.iter().zip(brow.iter()) {
                acc += gv * bv;
            }
            *o += acc;
        }
    }
}

/// out += a^T * g where a is m x k and g is m x n; out is k x n.
pub(crate) fn matmul_tn_into(a: &NdArray, g: &NdArray, out: &mut [f64]) {
    let (m, k) = (a.rows(), a.cols());
    let n = g.cols();
    debug_assert_eq!(g.rows(), m);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let grow = &g.data[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow.iter()) {
                *o += av * gv;
            }
        }
    }
}
