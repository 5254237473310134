//! Proximal-gradient Lasso solvers.
//!
//! Minimizes `1/2 ||A x - y||^2 + lambda ||x||_1`. The iteration loop is
//! written once against [`LassoOracle`]; run over a federation it is F-LQM,
//! run over a [`crate::CentralProblem`] it is plain FISTA/ISTA.

mod fista;
mod oracle;
mod reference;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SparseVector;

pub use fista::{
    estimate_lipschitz, flqm_solve, kkt_residual, solve, solve_with_observer, FistaState,
};
pub use oracle::{ColumnSet, FederatedOracle, LassoOracle};
pub use reference::{reference_solve, ReferenceSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1/L` with `L` from power iteration (or supplied).
    FixedLipschitz,
    /// Beck-Teboulle backtracking on `L`.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceleration {
    Ista,
    Fista,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// KKT residual at which a solve is accepted.
    pub tolerance: f64,
    pub step_rule: StepRule,
    /// Multiplier applied to the step when backtracking shrinks it.
    pub backtracking_factor: f64,
    pub acceleration: Acceleration,
    /// Adaptive momentum restart for FISTA.
    pub restart: bool,
    /// Power iterations for the Lipschitz estimate.
    pub power_iters: usize,
    /// Known Lipschitz constant; skips the estimate when set.
    #[serde(skip)]
    pub lipschitz: Option<f64>,
    /// Iterations between objective checks for divergence.
    pub divergence_check: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            tolerance: 1e-9,
            step_rule: StepRule::FixedLipschitz,
            backtracking_factor: 0.5,
            acceleration: Acceleration::Fista,
            restart: true,
            power_iters: 50,
            lipschitz: None,
            divergence_check: 25,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.backtracking_factor > 0.0 && self.backtracking_factor < 1.0) {
            return Err(Error::Config("backtracking factor must lie in (0, 1)".into()));
        }
        if self.power_iters == 0 {
            return Err(Error::Config("power_iters must be at least 1".into()));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("invalid Lipschitz constant {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub lambda: f64,
    pub x: SparseVector,
    pub objective: f64,
    /// Over the columns the solve ran on.
    pub kkt_residual: f64,
    pub iters_used: usize,
    pub converged: bool,
    /// Lipschitz constant (final one, when backtracking).
    pub lipschitz: f64,
}

#[derive(Serialize)]
struct SolveSummary {
    lambda: f64,
    objective: f64,
    kkt_residual: f64,
    nnz: usize,
    iters: usize,
}

impl SolveResult {
    pub const CSV_HEADER: &'static str = "lambda,objective,kkt_residual,nnz,iters";

    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{},{}",
            self.lambda,
            self.objective,
            self.kkt_residual,
            self.x.nnz(),
            self.iters_used
        )
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(&SolveSummary {
            lambda: self.lambda,
            objective: self.objective,
            kkt_residual: self.kkt_residual,
            nnz: self.x.nnz(),
            iters: self.iters_used,
        })
        .expect("summary serializes")
    }
}

/// `sign(v) * max(|v| - alpha, 0)`.
///
/// # Panics
/// If `alpha` is negative or NaN.
#[inline]
pub fn soft_threshold(v: f64, alpha: f64) -> f64 {
    assert!(alpha >= 0.0, "soft threshold needs alpha >= 0, got {alpha}");
    if v > alpha {
        v - alpha
    } else if v < -alpha {
        v + alpha
    } else {
        0.0
    }
}

/// Element-wise [`soft_threshold`].
pub fn shrink(v: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("soft threshold needs alpha >= 0, got {alpha}")));
    }
    Ok(v.iter().map(|&x| soft_threshold(x, alpha)).collect())
}

/// One proximal step `Γ_{lambda t}(x - t grad)`.
pub fn ista_step(x: &[f64], grad: &[f64], step: f64, lambda: f64) -> Result<Vec<f64>> {
    if x.len() != grad.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for {} coordinates",
            grad.len(),
            x.len()
        )));
    }
    if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient entry {j} is {}", grad[j])));
    }
    let alpha = lambda * step;
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("invalid threshold lambda * step = {alpha}")));
    }
    Ok(x
        .iter()
        .zip(grad)
        .map(|(xi, gi)| soft_threshold(xi - step * gi, alpha))
        .collect())
}

/// `1/2 rss + lambda ||x||_1`.
pub fn objective(rss: f64, lambda: f64, x: &SparseVector) -> f64 {
    0.5 * rss + lambda * x.l1_norm()
}

/// Largest KKT violation given the gradient `A^T (A x - y)` and `x` on the
/// same coordinates.
pub fn kkt_from_gradient(grad: &[f64], x: &[f64], lambda: f64) -> f64 {
    grad.iter()
        .zip(x)
        .map(|(g, xj)| kkt_entry(*g, *xj, lambda))
        .fold(0.0, f64::max)
}

#[inline]
pub(crate) fn kkt_entry(g: f64, xj: f64, lambda: f64) -> f64 {
    let c = -g / lambda;
    if xj > 0.0 {
        (c - 1.0).abs()
    } else if xj < 0.0 {
        (c + 1.0).abs()
    } else {
        (c.abs() - 1.0).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        for v in [-2.5, 0.0, 1e-300, 7.0] {
            assert_eq!(soft_threshold(v, 0.0), v);
        }
    }

    #[test]
    #[should_panic]
    fn negative_threshold_panics() {
        soft_threshold(1.0, -0.1);
    }

    #[test]
    fn shrink_rejects_negative_alpha() {
        assert!(shrink(&[1.0], -1.0).is_err());
    }

    #[test]
    fn ista_step_one_dimensional() {
        // A = [1], y = [2]: gradient at 0 is -2
        assert_eq!(ista_step(&[0.0], &[-2.0], 1.0, 1.0).unwrap(), vec![1.0]);
        // lambda at lambda_max keeps zero
        assert_eq!(ista_step(&[0.0], &[-2.0], 1.0, 2.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn ista_step_rejects_nan() {
        assert!(matches!(
            ista_step(&[0.0], &[f64::NAN], 1.0, 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn kkt_entries() {
        assert_eq!(kkt_from_gradient(&[-2.0], &[0.0], 2.0), 0.0);
        assert_eq!(kkt_from_gradient(&[-3.0], &[0.0], 2.0), 0.5);
        assert_eq!(kkt_from_gradient(&[-2.0], &[1.0], 2.0), 0.0);
        assert_eq!(kkt_from_gradient(&[-2.0], &[-1.0], 2.0), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            backtracking_factor: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
