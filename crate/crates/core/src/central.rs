//! Single-machine reference problem.
//!
//! Holds the concatenated design matrix but evaluates every global quantity
//! block by block with the same kernels the institutions use, then sums the
//! block results in the configured reduction order. With matching blocks and
//! order the results are bitwise identical to a federation run.

use crate::error::{Error, Result};
use crate::kernel::{self, BlockView, Columns, FeatureShard, ResponseShard, SparseVector};

#[derive(Debug, Clone)]
pub struct CentralProblem {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    y: Vec<f64>,
    /// `(start, len)` row range of each block.
    blocks: Vec<(usize, usize)>,
    order: Vec<usize>,
}

impl CentralProblem {
    /// A single-block problem from a column-major `rows x cols` matrix.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension("problem needs rows > 0 and cols > 0".into()));
        }
        if values.len() != rows * cols || y.len() != rows {
            return Err(Error::Dimension(format!(
                "{} values and {} responses for a {rows}x{cols} problem",
                values.len(),
                y.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            y,
            blocks: vec![(0, rows)],
            order: vec![0],
        })
    }

    /// Concatenates shards top to bottom; each shard becomes one block.
    pub fn from_shards(shards: &[(FeatureShard, ResponseShard)]) -> Result<Self> {
        let Some((first, _)) = shards.first() else {
            return Err(Error::EmptyDataset("no shards".into()));
        };
        let cols = first.cols();
        let mut blocks = Vec::with_capacity(shards.len());
        let mut rows = 0;
        for (a, y) in shards {
            if a.cols() != cols {
                return Err(Error::Dimension(format!(
                    "shard {} has {} columns, expected {cols}",
                    a.shard_id(),
                    a.cols()
                )));
            }
            if y.len() != a.rows() {
                return Err(Error::Dimension(format!(
                    "shard {} has {} rows but {} responses",
                    a.shard_id(),
                    a.rows(),
                    y.len()
                )));
            }
            blocks.push((rows, a.rows()));
            rows += a.rows();
        }
        if rows == 0 {
            return Err(Error::EmptyDataset("all shards are empty".into()));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for (a, _) in shards {
                values.extend_from_slice(a.column(j));
            }
        }
        let y = shards.iter().flat_map(|(_, y)| y.values().iter().copied()).collect();
        Ok(Self {
            rows,
            cols,
            values,
            y,
            order: (0..blocks.len()).collect(),
            blocks,
        })
    }

    pub fn with_reduction_order(mut self, order: Vec<usize>) -> Result<Self> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.blocks.len()).collect::<Vec<_>>() {
            return Err(Error::Config(format!(
                "reduction order {order:?} is not a permutation of 0..{}",
                self.blocks.len()
            )));
        }
        self.order = order;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major values of the whole matrix.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, b: usize) -> BlockView<'_> {
        let (start, len) = self.blocks[b];
        BlockView::new(&self.values, self.rows, self.cols, start, len)
    }

    pub fn block_response(&self, b: usize) -> &[f64] {
        let (start, len) = self.blocks[b];
        &self.y[start..start + len]
    }

    /// Global row range of block `b`.
    pub fn block_rows(&self, b: usize) -> std::ops::Range<usize> {
        let (start, len) = self.blocks[b];
        start..start + len
    }

    /// Sums per-block vectors in reduction order.
    pub fn reduce_vec<F>(&self, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, BlockView<'_>, &[f64]) -> Result<Vec<f64>>,
    {
        let mut parts = Vec::with_capacity(self.blocks.len());
        for b in 0..self.blocks.len() {
            parts.push(f(b, self.block(b), self.block_response(b))?);
        }
        crate::protocol::sum_in_order(&parts, &self.order)
    }

    /// Sums per-block scalars in reduction order.
    pub fn reduce_scalar<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(usize, BlockView<'_>, &[f64]) -> Result<f64>,
    {
        Ok(self.reduce_vec(|b, a, y| Ok(vec![f(b, a, y)?]))?[0])
    }

    /// `A^T y`.
    pub fn correlations(&self) -> Result<Vec<f64>> {
        self.reduce_vec(|_, a, y| Ok(kernel::transpose_apply(&a, y)))
    }

    /// `||[A]_j||^2` for every column.
    pub fn column_sq_norms(&self) -> Result<Vec<f64>> {
        self.reduce_vec(|_, a, _| Ok(kernel::column_sq_norms(&a)))
    }

    pub fn response_sq_norm(&self) -> Result<f64> {
        self.reduce_scalar(|_, _, y| Ok(kernel::dot(y, y)))
    }

    /// `A^T (A x - y)` over every column.
    pub fn gradient(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.reduce_vec(|_, a, y| kernel::partial_gradient(&a, y, x))
    }

    /// `A_K^T (A x - y)` for the listed columns.
    pub fn gradient_on(&self, x: &SparseVector, cols: &[usize]) -> Result<Vec<f64>> {
        self.reduce_vec(|_, a, y| kernel::partial_gradient_on(&a, y, x, cols))
    }

    /// `||A x - y||^2`.
    pub fn residual_sq(&self, x: &SparseVector) -> Result<f64> {
        self.reduce_scalar(|_, a, y| {
            let r = kernel::residual(&a, y, x)?;
            Ok(kernel::dot(&r, &r))
        })
    }

    /// `A_K^T A_K u`.
    pub fn gram_apply(&self, cols: &[usize], u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != cols.len() {
            return Err(Error::Dimension(format!(
                "gram vector has {} entries for {} columns",
                u.len(),
                cols.len()
            )));
        }
        self.reduce_vec(|_, a, _| {
            let au = kernel::apply_on(&a, cols, u);
            Ok(kernel::transpose_apply_on(&a, &au, cols))
        })
    }

    /// Shard pairs, one per block, with global row ids.
    pub fn to_shards(&self) -> Result<Vec<(FeatureShard, ResponseShard)>> {
        (0..self.blocks.len())
            .map(|b| {
                let view = self.block(b);
                let rows = self.block_rows(b);
                let mut values = Vec::with_capacity(rows.len() * self.cols);
                for j in 0..self.cols {
                    values.extend_from_slice(view.column(j));
                }
                let a = FeatureShard::new(b as u32, rows.len(), self.cols, values)?
                    .with_row_ids(rows.clone().map(|r| r as u64).collect())?;
                Ok((a, ResponseShard::new(b as u32, self.block_response(b).to_vec())))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blocks() -> CentralProblem {
        let s0 = FeatureShard::from_rows(0, &[vec![1.0, 0.0]]).unwrap();
        let s1 = FeatureShard::from_rows(1, &[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        CentralProblem::from_shards(&[
            (s0, ResponseShard::new(0, vec![3.0])),
            (s1, ResponseShard::new(1, vec![-4.0, 1.0])),
        ])
        .unwrap()
    }

    #[test]
    fn concatenation_is_column_major() {
        let c = two_blocks();
        assert_eq!(c.rows(), 3);
        assert_eq!(c.values(), &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(c.response(), &[3.0, -4.0, 1.0]);
        assert_eq!(c.correlations().unwrap(), vec![4.0, -3.0]);
    }

    #[test]
    fn shards_round_trip() {
        let c = two_blocks();
        let back = CentralProblem::from_shards(&c.to_shards().unwrap()).unwrap();
        assert_eq!(back.values(), c.values());
        assert_eq!(back.block_count(), 2);
    }

    #[test]
    fn bad_order_is_rejected() {
        assert!(two_blocks().with_reduction_order(vec![0, 0]).is_err());
        assert!(two_blocks().with_reduction_order(vec![1, 0]).is_ok());
    }
}
