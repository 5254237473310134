use crate::central::CentralProblem;
use crate::error::Result;
use crate::kernel::{self, SparseVector};

use super::distributed::{check_step, edpp_rule, safe_rule, DsafeState, EdppState, LambdaMax};
use super::{dual_estimate, DiscardMask, RuleOrigin};

/// SAFE on the concatenated data.
pub fn safe_screen(problem: &CentralProblem, lambda: f64) -> Result<DiscardMask> {
    let lm = LambdaMax::from_correlations(problem.correlations()?)?;
    let state = DsafeState::from_parts(lm, problem.column_sq_norms()?, problem.response_sq_norm()?);
    safe_rule(&state, lambda, RuleOrigin::Safe)
}

/// EDPP on the concatenated data, with full-length dual vectors.
#[derive(Debug, Clone)]
pub struct CentralEdpp {
    lambda_max: LambdaMax,
    t: f64,
    col_norms: Vec<f64>,
}

impl CentralEdpp {
    pub fn new(problem: &CentralProblem) -> Result<Self> {
        let lambda_max = LambdaMax::from_correlations(problem.correlations()?)?;
        let j = lambda_max.argmax;
        let t = problem.reduce_scalar(|_, a, y| kernel::column_dot(&a, j, y))?;
        let col_norms = problem.column_sq_norms()?.iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            lambda_max,
            t,
            col_norms,
        })
    }

    pub fn lambda_max(&self) -> &LambdaMax {
        &self.lambda_max
    }

    pub fn screen(
        &self,
        problem: &CentralProblem,
        lambda_k: f64,
        lambda_prev: f64,
        x_prev: &SparseVector,
    ) -> Result<(DiscardMask, Option<EdppState>)> {
        let lm = self.lambda_max.value;
        let p = problem.cols();
        check_step(lambda_k, lambda_prev, lm)?;
        if lambda_k >= lm {
            return Ok((DiscardMask::discard_all(lambda_k, p, RuleOrigin::Edpp), None));
        }

        let y = problem.response();
        let whole = kernel::BlockView::new(problem.values(), problem.rows(), p, 0, problem.rows());
        let theta = dual_estimate(&whole, y, x_prev, lambda_prev, lm)?;
        let v1: Vec<f64> = if lambda_prev >= lm {
            let sign = if self.t < 0.0 { -1.0 } else { 1.0 };
            let j = self.lambda_max.argmax;
            problem.values()[j * problem.rows()..(j + 1) * problem.rows()]
                .iter()
                .map(|v| sign * v)
                .collect()
        } else {
            y.iter().zip(&theta).map(|(yi, ti)| yi / lambda_prev - ti).collect()
        };
        let v2: Vec<f64> = y.iter().zip(&theta).map(|(yi, ti)| yi / lambda_k - ti).collect();

        let s = blockwise_dot(problem, &v1, &v1)?;
        let c = blockwise_dot(problem, &v1, &v2)?;
        let perp: Vec<f64> = if s > 0.0 {
            let f = c / s;
            v2.iter().zip(&v1).map(|(a, b)| a - f * b).collect()
        } else {
            v2
        };
        let pn = blockwise_dot(problem, &perp, &perp)?.sqrt();
        let u: Vec<f64> = theta.iter().zip(&perp).map(|(t, v)| t + 0.5 * v).collect();
        let w = problem.reduce_vec(|b, a, _| {
            let rows = problem.block_rows(b);
            Ok(kernel::transpose_apply(&a, &u[rows]))
        })?;

        let mask = edpp_rule(&w, pn, &self.col_norms, lambda_k, RuleOrigin::Edpp);
        let state = EdppState {
            lambda_max: lm,
            r: self.lambda_max.correlations.clone(),
            j: self.lambda_max.argmax,
            t: self.t,
            lambda_k,
            lambda_prev,
            s,
            v1_dot_v2: c,
            v2perp_norm: pn,
            w,
        };
        Ok((mask, Some(state)))
    }
}

fn blockwise_dot(problem: &CentralProblem, a: &[f64], b: &[f64]) -> Result<f64> {
    problem.reduce_scalar(|blk, _, _| {
        let rows = problem.block_rows(blk);
        Ok(kernel::dot(&a[rows.clone()], &b[rows]))
    })
}

/// One-shot EDPP step on the concatenated data.
pub fn edpp_screen(
    problem: &CentralProblem,
    lambda_k: f64,
    lambda_prev: f64,
    x_prev: &SparseVector,
) -> Result<DiscardMask> {
    Ok(CentralEdpp::new(problem)?.screen(problem, lambda_k, lambda_prev, x_prev)?.0)
}
