use crate::error::{Error, Result};
use crate::kernel::{dot, SparseVector};
use crate::protocol::{Federation, Transport};
use crate::screening::DiscardMask;

use super::{
    ista_step, kkt_from_gradient, objective, Acceleration, ColumnSet, FederatedOracle,
    LassoOracle, SolveResult, SolverConfig, StepRule,
};

/// Momentum state of FISTA in reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FistaState {
    /// Point the next gradient step starts from.
    pub x: Vec<f64>,
    /// Last proximal output `z^k`.
    pub z: Vec<f64>,
    pub t: f64,
    pub iter: usize,
}

impl FistaState {
    /// `z^0 = x^0`, `t_1 = 1`.
    pub fn new(x0: Vec<f64>) -> Self {
        Self {
            z: x0.clone(),
            x: x0,
            t: 1.0,
            iter: 0,
        }
    }

    pub fn next_momentum(t: f64) -> f64 {
        (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
    }

    /// Takes `z^k`, sets `x^{k+1} = z^k + beta (z^k - z^{k-1})` and returns
    /// `beta = (t_k - 1) / t_{k+1}`.
    pub fn accept(&mut self, z: Vec<f64>) -> f64 {
        let t_next = Self::next_momentum(self.t);
        let beta = (self.t - 1.0) / t_next;
        self.x = z
            .iter()
            .zip(&self.z)
            .map(|(zk, zp)| zk + beta * (zk - zp))
            .collect();
        self.z = z;
        self.t = t_next;
        self.iter += 1;
        beta
    }

    /// Drops the momentum: `x^{k+1} = z^k`, `t = 1`. Returns `beta = 0`.
    pub fn restart(&mut self, z: Vec<f64>) -> f64 {
        self.x = z.clone();
        self.z = z;
        self.t = 1.0;
        self.iter += 1;
        0.0
    }

    /// True when the last step moved against the momentum direction,
    /// `(x^k - z^k) . (z^k - z^{k-1}) > 0`.
    pub fn should_restart(&self, z: &[f64]) -> bool {
        let s: f64 = self
            .x
            .iter()
            .zip(z)
            .zip(&self.z)
            .map(|((x, zk), zp)| (x - zk) * (zk - zp))
            .sum();
        s > 0.0
    }
}

/// Power iteration on `A_K^T A_K`; returns the Rayleigh quotient times 1.05.
///
/// The start vector has distinct positive entries, so it is not orthogonal
/// to the top eigenvector of a symmetric pair such as `a` and `-a`.
pub fn estimate_lipschitz<O: LassoOracle + ?Sized>(
    oracle: &mut O,
    cols: ColumnSet<'_>,
    iters: usize,
) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Config("power iteration needs iters >= 1".into()));
    }
    let k = cols.len(oracle.feature_count());
    if k == 0 {
        return Err(Error::Degenerate("no columns to estimate a Lipschitz constant on".into()));
    }
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut u: Vec<f64> = (0..k).map(|j| 1.0 + ((j + 1) as f64 * PHI).fract()).collect();
    let n0 = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= n0);
    let mut rq = 0.0;
    for _ in 0..iters {
        let w = oracle.gram_apply(cols, &u)?;
        rq = dot(&u, &w);
        let norm = dot(&w, &w).sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric("power iteration overflowed".into()));
        }
        if norm == 0.0 {
            return Err(Error::Degenerate("A^T A vanishes on the start vector".into()));
        }
        u = w.iter().map(|v| v / norm).collect();
    }
    Ok(1.05 * rq)
}

/// Full KKT residual of `x` at `lambda` (one gradient round).
pub fn kkt_residual<O: LassoOracle + ?Sized>(oracle: &mut O, x: &SparseVector, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let g = oracle.gradient(x, ColumnSet::All)?;
    Ok(kkt_from_gradient(&g, &x.to_dense(), lambda))
}

pub fn solve<O: LassoOracle + ?Sized>(
    oracle: &mut O,
    lambda: f64,
    cols: ColumnSet<'_>,
    warm: &SparseVector,
    config: &SolverConfig,
) -> Result<SolveResult> {
    solve_with_observer(oracle, lambda, cols, warm, config, &mut |_, _| {})
}

/// F-LQM over a federation: the reduced solve on the columns `mask` keeps.
pub fn flqm_solve<T: Transport>(
    fed: &mut Federation<T>,
    lambda: f64,
    mask: &DiscardMask,
    warm: &SparseVector,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let all = mask.kept_count() == fed.feature_count();
    let mut oracle = FederatedOracle::new(fed);
    let cols = if all {
        ColumnSet::All
    } else {
        ColumnSet::Subset(mask.kept())
    };
    solve(&mut oracle, lambda, cols, warm, config)
}

/// Proximal-gradient solve restricted to `cols`, warm-started from `warm`
/// (entries outside `cols` are ignored). `observer` sees every proximal
/// output `z^k` in reduced coordinates.
///
/// Each iteration costs one gradient round: the gradient at the
/// extrapolated point is the same combination of the last two gradients as
/// the point is of the last two iterates.
pub fn solve_with_observer<O: LassoOracle + ?Sized>(
    oracle: &mut O,
    lambda: f64,
    cols: ColumnSet<'_>,
    warm: &SparseVector,
    config: &SolverConfig,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<SolveResult> {
    config.validate()?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let p = oracle.feature_count();
    if warm.len() != p {
        return Err(Error::Dimension(format!("warm start of length {} for p = {p}", warm.len())));
    }
    let kept: Vec<usize> = match cols {
        ColumnSet::All => (0..p).collect(),
        ColumnSet::Subset(c) => c.to_vec(),
    };
    let inflate = |v: &[f64]| SparseVector::from_subset(p, &kept, v);

    if kept.is_empty() {
        let x = SparseVector::zeros(p);
        let rss = oracle.residual_sq(&x)?;
        return Ok(SolveResult {
            lambda,
            objective: objective(rss, lambda, &x),
            x,
            kkt_residual: 0.0,
            iters_used: 0,
            converged: true,
            lipschitz: 0.0,
        });
    }

    let x0 = warm.gather(&kept);
    let x0_sparse = inflate(&x0);
    let initial_obj = objective(oracle.residual_sq(&x0_sparse)?, lambda, &x0_sparse);
    let mut g_prev = oracle.gradient(&x0_sparse, cols)?;
    let mut kkt = kkt_from_gradient(&g_prev, &x0, lambda);
    let mut state = FistaState::new(x0);
    if kkt <= config.tolerance {
        let lip = config.lipschitz.unwrap_or(0.0);
        return finish(oracle, lambda, inflate(&state.z), kkt, 0, true, lip);
    }
    let mut lip = match (config.step_rule, config.lipschitz) {
        (_, Some(l)) => l,
        (StepRule::FixedLipschitz, None) => estimate_lipschitz(oracle, cols, config.power_iters)?,
        (StepRule::Backtracking, None) => 1.0,
    };

    let mut g_x = g_prev.clone();
    for k in 1..=config.max_iters {
        let z = match config.step_rule {
            StepRule::FixedLipschitz => ista_step(&state.x, &g_x, 1.0 / lip, lambda)?,
            StepRule::Backtracking => {
                let fx = 0.5 * oracle.residual_sq(&inflate(&state.x))?;
                loop {
                    let z = ista_step(&state.x, &g_x, 1.0 / lip, lambda)?;
                    let fz = 0.5 * oracle.residual_sq(&inflate(&z))?;
                    let d: Vec<f64> = z.iter().zip(&state.x).map(|(a, b)| a - b).collect();
                    let bound = fx + dot(&g_x, &d) + 0.5 * lip * dot(&d, &d);
                    if fz <= bound + 1e-12 * bound.abs() {
                        break z;
                    }
                    lip /= config.backtracking_factor;
                    if !lip.is_finite() {
                        return Err(Error::Numeric("backtracking step underflowed".into()));
                    }
                }
            }
        };
        let g_z = oracle.gradient(&inflate(&z), cols)?;
        kkt = kkt_from_gradient(&g_z, &z, lambda);
        observer(k, &z);
        if kkt <= config.tolerance {
            return finish(oracle, lambda, inflate(&z), kkt, k, true, lip);
        }
        if config.divergence_check > 0 && k % config.divergence_check == 0 {
            let zs = inflate(&z);
            let obj = objective(oracle.residual_sq(&zs)?, lambda, &zs);
            if !obj.is_finite() || obj > 10.0 * initial_obj.max(f64::MIN_POSITIVE) {
                return Err(Error::StepSize(format!(
                    "objective grew from {initial_obj:e} to {obj:e} after {k} iterations"
                )));
            }
        }
        match config.acceleration {
            Acceleration::Fista => {
                let beta = if config.restart && state.should_restart(&z) {
                    state.restart(z)
                } else {
                    state.accept(z)
                };
                g_x = g_z
                    .iter()
                    .zip(&g_prev)
                    .map(|(gz, gp)| gz + beta * (gz - gp))
                    .collect();
            }
            Acceleration::Ista => {
                state.x = z.clone();
                state.z = z;
                state.iter += 1;
                g_x = g_z.clone();
            }
        }
        g_prev = g_z;
    }
    let z = std::mem::take(&mut state.z);
    finish(oracle, lambda, inflate(&z), kkt, config.max_iters, false, lip)
}

fn finish<O: LassoOracle + ?Sized>(
    oracle: &mut O,
    lambda: f64,
    x: SparseVector,
    kkt: f64,
    iters: usize,
    converged: bool,
    lipschitz: f64,
) -> Result<SolveResult> {
    let rss = oracle.residual_sq(&x)?;
    Ok(SolveResult {
        lambda,
        objective: objective(rss, lambda, &x),
        x,
        kkt_residual: kkt,
        iters_used: iters,
        converged,
        lipschitz,
    })
}
