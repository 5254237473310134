use crate::error::{Error, Result};
use crate::kernel::{self, Columns, SparseVector};

/// Institution's slice of the dual feasible point at `lambda`:
/// `y_i / lambda_max` at the top of the path, `(y_i - A_i x) / lambda` below
/// it, where `x_prev` is the accepted solution at `lambda`.
pub fn dual_estimate<M: Columns>(
    a: &M,
    y: &[f64],
    x_prev: &SparseVector,
    lambda: f64,
    lambda_max: f64,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || lambda > lambda_max {
        return Err(Error::Config(format!(
            "dual estimate needs 0 < lambda <= lambda_max (got {lambda}, max {lambda_max})"
        )));
    }
    if lambda >= lambda_max {
        return Ok(y.iter().map(|v| v / lambda_max).collect());
    }
    let r = kernel::residual(a, y, x_prev)?;
    Ok(r.iter().map(|v| -v / lambda).collect())
}

/// Per-row EDPP vectors held privately by one institution between the
/// aggregation rounds of a screening step.
#[derive(Debug, Clone, Default)]
pub struct ShardEdpp {
    pivot: Option<Vec<f64>>,
    theta: Vec<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
    v2perp: Option<Vec<f64>>,
}

impl ShardEdpp {
    /// Caches `v_i = [A_i]_J` and returns `T_i = v_i^T y_i`.
    pub fn pivot<M: Columns>(&mut self, a: &M, y: &[f64], j: usize) -> Result<f64> {
        let t = kernel::column_dot(a, j, y)?;
        self.pivot = Some(a.column(j).to_vec());
        Ok(t)
    }

    /// Builds `theta_i(lambda_prev)`, `v1_i` and `v2_i(lambda_k, lambda_prev)`
    /// and returns `S_i = ||v1_i||^2`.
    #[allow(clippy::too_many_arguments)]
    pub fn prepare<M: Columns>(
        &mut self,
        a: &M,
        y: &[f64],
        x_prev: &SparseVector,
        lambda_k: f64,
        lambda_prev: f64,
        lambda_max: f64,
        sign_t: f64,
    ) -> Result<f64> {
        if !(lambda_k > 0.0) || lambda_k >= lambda_prev {
            return Err(Error::Config(format!(
                "screening needs 0 < lambda_k < lambda_prev (got {lambda_k} and {lambda_prev})"
            )));
        }
        self.theta = dual_estimate(a, y, x_prev, lambda_prev, lambda_max)?;
        self.v1 = if lambda_prev >= lambda_max {
            let v = self
                .pivot
                .as_ref()
                .ok_or_else(|| Error::Protocol("pivot column requested before T round".into()))?;
            v.iter().map(|vi| sign_t * vi).collect()
        } else {
            y.iter()
                .zip(&self.theta)
                .map(|(yi, ti)| yi / lambda_prev - ti)
                .collect()
        };
        self.v2 = y
            .iter()
            .zip(&self.theta)
            .map(|(yi, ti)| yi / lambda_k - ti)
            .collect();
        self.v2perp = None;
        Ok(kernel::dot(&self.v1, &self.v1))
    }

    fn ready(&self) -> Result<()> {
        if self.v1.len() != self.theta.len() || self.v2.len() != self.theta.len() {
            return Err(Error::Protocol("EDPP step not prepared".into()));
        }
        Ok(())
    }

    pub fn v1_dot_v2(&self) -> Result<f64> {
        self.ready()?;
        Ok(kernel::dot(&self.v1, &self.v2))
    }

    /// Forms `v2perp_i = v2_i - (<v1, v2> / S) v1_i` from the aggregated
    /// inner product `c` and `S`; returns `||v2perp_i||^2`. When `S == 0`
    /// the projection is skipped.
    pub fn project(&mut self, c: f64, s: f64) -> Result<f64> {
        self.ready()?;
        let perp: Vec<f64> = if s > 0.0 {
            let f = c / s;
            self.v2.iter().zip(&self.v1).map(|(a, b)| a - f * b).collect()
        } else {
            self.v2.clone()
        };
        let n = kernel::dot(&perp, &perp);
        self.v2perp = Some(perp);
        Ok(n)
    }

    pub fn v1_dot_v2perp(&self) -> Result<f64> {
        let perp = self.perp()?;
        Ok(kernel::dot(&self.v1, perp))
    }

    fn perp(&self) -> Result<&Vec<f64>> {
        self.v2perp
            .as_ref()
            .ok_or_else(|| Error::Protocol("EDPP projection not computed".into()))
    }

    /// `w_i = A_i^T (theta_i + v2perp_i / 2)`.
    pub fn scores<M: Columns>(&self, a: &M) -> Result<Vec<f64>> {
        let perp = self.perp()?;
        let u: Vec<f64> = self
            .theta
            .iter()
            .zip(perp)
            .map(|(t, v)| t + 0.5 * v)
            .collect();
        Ok(kernel::transpose_apply(a, &u))
    }
}
