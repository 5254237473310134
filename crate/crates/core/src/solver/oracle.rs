use crate::central::CentralProblem;
use crate::error::Result;
use crate::kernel::SparseVector;
use crate::protocol::{tags, Federation, Transport};

/// Columns a query is restricted to.
#[derive(Debug, Clone, Copy)]
pub enum ColumnSet<'a> {
    All,
    /// Sorted, duplicate-free column ids.
    Subset(&'a [usize]),
}

impl ColumnSet<'_> {
    pub fn len(&self, p: usize) -> usize {
        match self {
            ColumnSet::All => p,
            ColumnSet::Subset(c) => c.len(),
        }
    }
}

/// The three global quantities a proximal solver needs. Implemented by the
/// centralized reference problem and by a federation, so the solver loop is
/// shared and the two runs can be compared iterate by iterate.
pub trait LassoOracle {
    fn feature_count(&self) -> usize;

    /// `A_K^T (A x - y)`.
    fn gradient(&mut self, x: &SparseVector, cols: ColumnSet<'_>) -> Result<Vec<f64>>;

    /// `||A x - y||^2`.
    fn residual_sq(&mut self, x: &SparseVector) -> Result<f64>;

    /// `A_K^T A_K u`.
    fn gram_apply(&mut self, cols: ColumnSet<'_>, u: &[f64]) -> Result<Vec<f64>>;
}

impl LassoOracle for CentralProblem {
    fn feature_count(&self) -> usize {
        self.cols()
    }

    fn gradient(&mut self, x: &SparseVector, cols: ColumnSet<'_>) -> Result<Vec<f64>> {
        match cols {
            ColumnSet::All => CentralProblem::gradient(self, x),
            ColumnSet::Subset(c) => self.gradient_on(x, c),
        }
    }

    fn residual_sq(&mut self, x: &SparseVector) -> Result<f64> {
        CentralProblem::residual_sq(self, x)
    }

    fn gram_apply(&mut self, cols: ColumnSet<'_>, u: &[f64]) -> Result<Vec<f64>> {
        match cols {
            ColumnSet::All => {
                let all: Vec<usize> = (0..self.cols()).collect();
                CentralProblem::gram_apply(self, &all, u)
            }
            ColumnSet::Subset(c) => CentralProblem::gram_apply(self, c, u),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MaskState {
    Unknown,
    All,
    Subset(Vec<usize>),
}

/// A federation seen as a solver oracle. Model and mask broadcasts are sent
/// only when they change.
pub struct FederatedOracle<'a, T: Transport> {
    fed: &'a mut Federation<T>,
    mask: MaskState,
    model: Option<SparseVector>,
}

impl<'a, T: Transport> FederatedOracle<'a, T> {
    pub fn new(fed: &'a mut Federation<T>) -> Self {
        Self {
            fed,
            mask: MaskState::Unknown,
            model: None,
        }
    }

    /// Direct access to the federation; forgets what the workers hold.
    pub fn federation(&mut self) -> &mut Federation<T> {
        self.mask = MaskState::Unknown;
        self.model = None;
        self.fed
    }

    fn ensure_model(&mut self, x: &SparseVector) -> Result<()> {
        if self.model.as_ref() != Some(x) {
            self.fed.broadcast_model(x)?;
            self.model = Some(x.clone());
        }
        Ok(())
    }

    fn ensure_mask(&mut self, cols: ColumnSet<'_>) -> Result<()> {
        let want = match cols {
            ColumnSet::All => MaskState::All,
            ColumnSet::Subset(c) => MaskState::Subset(c.to_vec()),
        };
        if self.mask != want {
            match cols {
                ColumnSet::All => self.fed.broadcast_mask(None)?,
                ColumnSet::Subset(c) => self.fed.broadcast_mask(Some(c))?,
            }
            self.mask = want;
        }
        Ok(())
    }
}

impl<T: Transport> LassoOracle for FederatedOracle<'_, T> {
    fn feature_count(&self) -> usize {
        self.fed.feature_count()
    }

    fn gradient(&mut self, x: &SparseVector, cols: ColumnSet<'_>) -> Result<Vec<f64>> {
        self.ensure_model(x)?;
        let p = self.fed.feature_count();
        match cols {
            ColumnSet::All => self.fed.aggregate_vector(tags::FULL_GRADIENT, Vec::new(), p),
            ColumnSet::Subset(c) => {
                self.ensure_mask(cols)?;
                self.fed.aggregate_vector(tags::GRADIENT, Vec::new(), c.len())
            }
        }
    }

    fn residual_sq(&mut self, x: &SparseVector) -> Result<f64> {
        self.ensure_model(x)?;
        self.fed.aggregate_scalar(tags::RSS, Vec::new())
    }

    fn gram_apply(&mut self, cols: ColumnSet<'_>, u: &[f64]) -> Result<Vec<f64>> {
        self.ensure_mask(cols)?;
        let len = cols.len(self.fed.feature_count());
        self.fed.aggregate_vector(tags::GRAM, u.to_vec(), len)
    }
}
