use crate::error::{Error, Result};
use crate::kernel::SparseVector;
use crate::protocol::{encode_indices, tags, Federation, Transport};

use super::{DiscardMask, RuleOrigin};

/// `lambda_max = ||A^T y||_inf` together with `R = A^T y` and its argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMax {
    pub value: f64,
    pub correlations: Vec<f64>,
    /// Smallest index attaining the maximum.
    pub argmax: usize,
}

impl LambdaMax {
    pub fn from_correlations(r: Vec<f64>) -> Result<Self> {
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("correlation {j} is not finite")));
        }
        let mut argmax = 0;
        let mut value = 0.0;
        for (j, v) in r.iter().enumerate() {
            if v.abs() > value {
                value = v.abs();
                argmax = j;
            }
        }
        if value == 0.0 {
            return Err(Error::Degenerate(
                "A^T y is zero: x = 0 is optimal for every lambda".into(),
            ));
        }
        Ok(Self {
            value,
            correlations: r,
            argmax,
        })
    }
}

/// Aggregates `R = sum_i A_i^T y_i` and derives `lambda_max`.
pub fn compute_lambda_max<T: Transport>(fed: &mut Federation<T>) -> Result<LambdaMax> {
    let p = fed.feature_count();
    LambdaMax::from_correlations(fed.aggregate_vector(tags::CORRELATION, Vec::new(), p)?)
}

/// Aggregates needed by the SAFE test.
#[derive(Debug, Clone, PartialEq)]
pub struct DsafeState {
    pub q: Vec<f64>,
    pub h: Vec<f64>,
    pub y_norm: f64,
    pub lambda_max: f64,
}

impl DsafeState {
    pub fn gather<T: Transport>(fed: &mut Federation<T>) -> Result<Self> {
        let lm = compute_lambda_max(fed)?;
        let p = fed.feature_count();
        let h = fed.aggregate_vector(tags::COLUMN_NORMS, Vec::new(), p)?;
        let yy = fed.aggregate_scalar(tags::RESPONSE_NORM, Vec::new())?;
        Ok(Self::from_parts(lm, h, yy))
    }

    pub(crate) fn from_parts(lm: LambdaMax, h: Vec<f64>, yy: f64) -> Self {
        Self {
            q: lm.correlations,
            h,
            y_norm: yy.sqrt(),
            lambda_max: lm.value,
        }
    }
}

/// Discards `j` iff `|Q_j| < lambda - ||a_j|| ||y|| (lambda_max - lambda) / lambda_max`.
pub fn dsafe_screen(state: &DsafeState, lambda: f64) -> Result<DiscardMask> {
    safe_rule(state, lambda, RuleOrigin::DSafe)
}

pub(crate) fn safe_rule(state: &DsafeState, lambda: f64, origin: RuleOrigin) -> Result<DiscardMask> {
    let lm = state.lambda_max;
    if !(lambda > 0.0) || lambda > lm {
        return Err(Error::Config(format!(
            "SAFE needs 0 < lambda <= lambda_max (got {lambda}, max {lm})"
        )));
    }
    let slack = state.y_norm * (lm - lambda) / lm;
    let discard: Vec<bool> = state
        .q
        .iter()
        .zip(&state.h)
        .map(|(q, h)| q.abs() < lambda - h.sqrt() * slack)
        .collect();
    Ok(DiscardMask::from_flags(lambda, origin, &discard))
}

/// Aggregated EDPP quantities of one screening step. The per-row vectors
/// (`theta_i`, `v1_i`, `v2_i`, `v2perp_i`) stay at the institutions.
#[derive(Debug, Clone, PartialEq)]
pub struct EdppState {
    pub lambda_max: f64,
    pub r: Vec<f64>,
    pub j: usize,
    pub t: f64,
    pub lambda_k: f64,
    pub lambda_prev: f64,
    pub s: f64,
    pub v1_dot_v2: f64,
    pub v2perp_norm: f64,
    pub w: Vec<f64>,
}

/// Discards `j` iff `|w_j| < 1 - ||v2perp|| ||a_j|| / 2`.
pub(crate) fn edpp_rule(
    w: &[f64],
    v2perp_norm: f64,
    col_norms: &[f64],
    lambda: f64,
    origin: RuleOrigin,
) -> DiscardMask {
    let discard: Vec<bool> = w
        .iter()
        .zip(col_norms)
        .map(|(wj, nj)| wj.abs() < 1.0 - 0.5 * v2perp_norm * nj)
        .collect();
    DiscardMask::from_flags(lambda, origin, &discard)
}

pub(crate) fn check_step(lambda_k: f64, lambda_prev: f64, lambda_max: f64) -> Result<()> {
    if !(lambda_k > 0.0) || !(lambda_prev > 0.0) || lambda_prev > lambda_max {
        return Err(Error::Config(format!(
            "EDPP needs 0 < lambda_prev <= lambda_max (got {lambda_prev}, max {lambda_max})"
        )));
    }
    if lambda_k >= lambda_prev && lambda_k < lambda_max {
        return Err(Error::Config(format!(
            "lambda path must decrease (lambda_k = {lambda_k}, lambda_prev = {lambda_prev})"
        )));
    }
    Ok(())
}

/// Session-level D-EDPP state: `lambda_max`, `R`, `J`, `T` and the column
/// norms, computed once and reused for every path step.
#[derive(Debug, Clone)]
pub struct DedppSession {
    lambda_max: LambdaMax,
    t: f64,
    sign_t: f64,
    h: Vec<f64>,
    col_norms: Vec<f64>,
    y_sq_norm: f64,
}

impl DedppSession {
    pub fn start<T: Transport>(fed: &mut Federation<T>) -> Result<Self> {
        let lm = compute_lambda_max(fed)?;
        let p = fed.feature_count();
        let t = fed.aggregate_scalar(tags::PIVOT, encode_indices([lm.argmax]))?;
        let h = fed.aggregate_vector(tags::COLUMN_NORMS, Vec::new(), p)?;
        let yy = fed.aggregate_scalar(tags::RESPONSE_NORM, Vec::new())?;
        Ok(Self {
            lambda_max: lm,
            t,
            sign_t: if t < 0.0 { -1.0 } else { 1.0 },
            col_norms: h.iter().map(|v| v.sqrt()).collect(),
            h,
            y_sq_norm: yy,
        })
    }

    pub fn lambda_max(&self) -> &LambdaMax {
        &self.lambda_max
    }

    pub fn pivot_product(&self) -> f64 {
        self.t
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.col_norms
    }

    /// SAFE aggregates from the same session (no extra rounds).
    pub fn dsafe_state(&self) -> DsafeState {
        DsafeState::from_parts(self.lambda_max.clone(), self.h.clone(), self.y_sq_norm)
    }

    /// Screens `lambda_k` given the accepted solution `x_prev` at
    /// `lambda_prev`. Broadcasts `x_prev` as the shared model.
    pub fn screen<T: Transport>(
        &self,
        fed: &mut Federation<T>,
        lambda_k: f64,
        lambda_prev: f64,
        x_prev: &SparseVector,
    ) -> Result<(DiscardMask, Option<EdppState>)> {
        let lm = self.lambda_max.value;
        let p = fed.feature_count();
        check_step(lambda_k, lambda_prev, lm)?;
        if lambda_k >= lm {
            return Ok((DiscardMask::discard_all(lambda_k, p, RuleOrigin::DEdpp), None));
        }
        fed.broadcast_model(x_prev)?;
        let s = fed.aggregate_scalar(tags::EDPP_S, vec![lambda_k, lambda_prev, lm, self.sign_t])?;
        let c = fed.aggregate_scalar(tags::EDPP_V1V2, Vec::new())?;
        let pn2 = fed.aggregate_scalar(tags::EDPP_PERP_NORM, vec![c, s])?;
        let w = fed.aggregate_vector(tags::EDPP_SCORES, Vec::new(), p)?;
        let pn = pn2.sqrt();
        let mask = edpp_rule(&w, pn, &self.col_norms, lambda_k, RuleOrigin::DEdpp);
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

    /// Aggregated `<v1, v2perp>` of the last screened step.
    pub fn orthogonality<T: Transport>(&self, fed: &mut Federation<T>) -> Result<f64> {
        fed.aggregate_scalar(tags::EDPP_ORTHO, Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_max_tie_takes_smallest_index() {
        let lm = LambdaMax::from_correlations(vec![1.0, -3.0, 3.0]).unwrap();
        assert_eq!(lm.value, 3.0);
        assert_eq!(lm.argmax, 1);
    }

    #[test]
    fn zero_correlations_are_degenerate() {
        assert!(matches!(
            LambdaMax::from_correlations(vec![0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    fn safe_state() -> DsafeState {
        DsafeState {
            q: vec![3.0, -4.0, 1.0],
            h: vec![1.0, 1.0, 2.0],
            y_norm: 5.0,
            lambda_max: 4.0,
        }
    }

    #[test]
    fn safe_at_lambda_max_keeps_only_argmax() {
        let m = dsafe_screen(&safe_state(), 4.0).unwrap();
        assert_eq!(m.kept(), &[1]);
    }

    #[test]
    fn safe_near_zero_discards_nothing() {
        let m = dsafe_screen(&safe_state(), 1e-9).unwrap();
        assert_eq!(m.kept_count(), 3);
    }

    #[test]
    fn safe_rejects_bad_lambda() {
        assert!(dsafe_screen(&safe_state(), 0.0).is_err());
        assert!(dsafe_screen(&safe_state(), 4.5).is_err());
    }

    #[test]
    fn edpp_boundary_equality_keeps_feature() {
        // |w| == 1 - r||a|| exactly
        let m = edpp_rule(&[0.5, 0.49], 1.0, &[1.0, 1.0], 1.0, RuleOrigin::Edpp);
        assert_eq!(m.kept(), &[0]);
    }

    #[test]
    fn non_monotone_step_is_rejected() {
        assert!(check_step(2.0, 1.0, 4.0).is_err());
        assert!(check_step(1.0, 5.0, 4.0).is_err());
        assert!(check_step(1.0, 2.0, 4.0).is_ok());
    }
}
