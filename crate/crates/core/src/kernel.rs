//! Shard-local linear algebra.
//!
//! Everything an institution computes from its own `(A_i, y_i)` before the
//! result is handed to the aggregator. Matrices are column-major so that the
//! per-feature loops of the screening rules and gradients read contiguous
//! memory.
//!
//! All reductions go through [`dot`], which uses a fixed four-lane
//! accumulation order. Any two code paths that feed it the same slices get
//! bitwise identical results, which is what lets the distributed and the
//! centralized solvers be compared exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense numeric carrier (model slices, dual points, gradients).
pub type DenseVector = Vec<f64>;

/// Read-only column access to a column-major matrix.
pub trait Columns {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn column(&self, j: usize) -> &[f64];
}

/// One institution's feature block `A_i` (rows are subjects).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureShard {
    shard_id: u32,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    row_ids: Vec<u64>,
}

impl FeatureShard {
    /// Builds a shard from column-major values. Global row ids default to
    /// `0..rows`.
    pub fn new(shard_id: u32, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "shard {shard_id} must have rows > 0 and cols > 0 (got {rows}x{cols})"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "shard {shard_id}: {} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self {
            shard_id,
            rows,
            cols,
            values,
            row_ids: (0..rows as u64).collect(),
        })
    }

    /// Builds a shard from row-major nested rows (test and CSV convenience).
    pub fn from_rows(shard_id: u32, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let mut values = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                values[j * n + i] = v;
            }
        }
        Self::new(shard_id, n, p, values)
    }

    pub fn with_row_ids(mut self, row_ids: Vec<u64>) -> Result<Self> {
        if row_ids.len() != self.rows {
            return Err(Error::Dimension(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                self.rows
            )));
        }
        self.row_ids = row_ids;
        Ok(self)
    }

    pub fn shard_id(&self) -> u32 {
        self.shard_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major backing storage.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Global subject ids of the rows, in storage order.
    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[col * self.rows + row]
    }

    /// Copy of the shard restricted to the given local rows (in the given
    /// order). The result may have zero rows; it is a working view for
    /// subsampling, not a loadable shard.
    pub fn select_rows(&self, local_rows: &[usize]) -> FeatureShard {
        let n = local_rows.len();
        let mut values = Vec::with_capacity(n * self.cols);
        for j in 0..self.cols {
            let col = self.column(j);
            values.extend(local_rows.iter().map(|&r| col[r]));
        }
        FeatureShard {
            shard_id: self.shard_id,
            rows: n,
            cols: self.cols,
            values,
            row_ids: local_rows.iter().map(|&r| self.row_ids[r]).collect(),
        }
    }
}

impl Columns for FeatureShard {
    fn n_rows(&self) -> usize {
        self.rows
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }
}

/// A contiguous row block of a larger column-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    values: &'a [f64],
    stride: usize,
    start: usize,
    len: usize,
    cols: usize,
}

impl<'a> BlockView<'a> {
    /// `values` is an `stride x cols` column-major matrix; the view covers
    /// rows `start..start + len`.
    pub fn new(values: &'a [f64], stride: usize, cols: usize, start: usize, len: usize) -> Self {
        assert_eq!(values.len(), stride * cols);
        assert!(start + len <= stride);
        Self {
            values,
            stride,
            start,
            len,
            cols,
        }
    }
}

impl Columns for BlockView<'_> {
    fn n_rows(&self) -> usize {
        self.len
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn column(&self, j: usize) -> &[f64] {
        let base = j * self.stride + self.start;
        &self.values[base..base + self.len]
    }
}

/// One institution's response vector `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseShard {
    shard_id: u32,
    values: Vec<f64>,
}

impl ResponseShard {
    pub fn new(shard_id: u32, values: Vec<f64>) -> Self {
        Self { shard_id, values }
    }

    pub fn shard_id(&self) -> u32 {
        self.shard_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select_rows(&self, local_rows: &[usize]) -> ResponseShard {
        ResponseShard {
            shard_id: self.shard_id,
            values: local_rows.iter().map(|&r| self.values[r]).collect(),
        }
    }
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    len: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Validating constructor. Explicit zeros are dropped.
    pub fn new(len: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Dimension("sparse index/value length mismatch".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("sparse indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i >= len) {
            return Err(Error::Dimension(format!("sparse index out of range for length {len}")));
        }
        let (indices, values) = indices
            .into_iter()
            .zip(values)
            .filter(|&(_, v)| v != 0.0)
            .unzip();
        Ok(Self {
            len,
            indices,
            values,
        })
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let mut out = Self::zeros(dense.len());
        for (j, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(j);
                out.values.push(v);
            }
        }
        out
    }

    /// Scatters `values` (aligned with `support`) into a length-`len` vector.
    pub fn from_subset(len: usize, support: &[usize], values: &[f64]) -> Self {
        debug_assert_eq!(support.len(), values.len());
        let mut out = Self::zeros(len);
        for (&j, &v) in support.iter().zip(values) {
            if v != 0.0 {
                out.indices.push(j);
                out.values.push(v);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, j: usize) -> f64 {
        match self.indices.binary_search(&j) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    /// Values at `support` positions, as a dense vector aligned with it.
    pub fn gather(&self, support: &[usize]) -> Vec<f64> {
        support.iter().map(|&j| self.get(j)).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Inner product with a fixed four-lane accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_pair<M: Columns>(a: &M, y: &[f64]) -> Result<()> {
    if y.len() != a.n_rows() {
        return Err(Error::Dimension(format!(
            "response has {} entries, shard has {} rows",
            y.len(),
            a.n_rows()
        )));
    }
    Ok(())
}

/// `A x - y`, touching only the columns in the support of `x`.
pub fn residual<M: Columns>(a: &M, y: &[f64], x: &SparseVector) -> Result<Vec<f64>> {
    check_pair(a, y)?;
    if x.len() != a.n_cols() {
        return Err(Error::Dimension(format!(
            "model has length {}, shard has {} columns",
            x.len(),
            a.n_cols()
        )));
    }
    let mut r: Vec<f64> = y.iter().map(|v| -v).collect();
    for (j, xj) in x.iter() {
        axpy(xj, a.column(j), &mut r);
    }
    Ok(r)
}

/// `A^T v` over every column.
pub fn transpose_apply<M: Columns>(a: &M, v: &[f64]) -> Vec<f64> {
    (0..a.n_cols()).map(|j| dot(a.column(j), v)).collect()
}

/// `A_K^T v` for the listed columns, in list order.
pub fn transpose_apply_on<M: Columns>(a: &M, v: &[f64], cols: &[usize]) -> Vec<f64> {
    cols.iter().map(|&j| dot(a.column(j), v)).collect()
}

/// `A_K u` for a dense `u` aligned with `cols`.
pub fn apply_on<M: Columns>(a: &M, cols: &[usize], u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.n_rows()];
    for (&j, &uj) in cols.iter().zip(u) {
        if uj != 0.0 {
            axpy(uj, a.column(j), &mut out);
        }
    }
    out
}

/// `A_i^T (A_i x - y_i)` over every feature.
pub fn partial_gradient<M: Columns>(a: &M, y: &[f64], x: &SparseVector) -> Result<Vec<f64>> {
    let r = residual(a, y, x)?;
    Ok(transpose_apply(a, &r))
}

/// `A_i^T (A_i x - y_i)` restricted to `cols`.
pub fn partial_gradient_on<M: Columns>(
    a: &M,
    y: &[f64],
    x: &SparseVector,
    cols: &[usize],
) -> Result<Vec<f64>> {
    if let Some(&bad) = cols.iter().find(|&&j| j >= a.n_cols()) {
        return Err(Error::Dimension(format!("column {bad} out of range")));
    }
    let r = residual(a, y, x)?;
    Ok(transpose_apply_on(a, &r, cols))
}

/// `||[A_i]_j||^2` for every column.
pub fn column_sq_norms<M: Columns>(a: &M) -> Vec<f64> {
    (0..a.n_cols())
        .map(|j| {
            let c = a.column(j);
            dot(c, c)
        })
        .collect()
}

/// `[A_i]_j^T v`.
pub fn column_dot<M: Columns>(a: &M, j: usize, v: &[f64]) -> Result<f64> {
    if j >= a.n_cols() {
        return Err(Error::Dimension(format!(
            "column {j} out of range for {} columns",
            a.n_cols()
        )));
    }
    if v.len() != a.n_rows() {
        return Err(Error::Dimension(format!(
            "vector has {} entries, shard has {} rows",
            v.len(),
            a.n_rows()
        )));
    }
    Ok(dot(a.column(j), v))
}
