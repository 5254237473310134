use std::io::Write;
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::central::CentralProblem;
use crate::error::{Error, Result};
use crate::kernel::SparseVector;
use crate::protocol::{Federation, Transport};
use crate::screening::{
    dsafe_screen, safe_screen, CentralEdpp, DedppSession, DiscardMask, RuleOrigin,
};
use crate::solver::{
    estimate_lipschitz, kkt_from_gradient, solve, ColumnSet, FederatedOracle, LassoOracle,
    SolveResult, SolverConfig,
};

/// Screening applied before each path solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreeningRule {
    None,
    Safe,
    Edpp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub screening: ScreeningRule,
    pub solver: SolverConfig,
    /// Screening is skipped when the previous solution's KKT residual is
    /// above this.
    pub screen_gate: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            screening: ScreeningRule::Edpp,
            solver: SolverConfig::default(),
            screen_gate: 1e-6,
        }
    }
}

/// `lambda / lambda_max` ratios of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPath {
    pub lambda_max: f64,
    pub ratios: Vec<f64>,
    pub values: Vec<f64>,
}

/// Linearly spaced ratios from 1 down to `min_ratio`.
pub fn build_path(lambda_max: f64, num_points: usize, min_ratio: f64) -> Result<LambdaPath> {
    if num_points < 1 {
        return Err(Error::Config("a path needs at least one point".into()));
    }
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::Config(format!("invalid lambda_max {lambda_max}")));
    }
    let ratios: Vec<f64> = if num_points == 1 {
        vec![1.0]
    } else {
        if !(min_ratio > 0.0 && min_ratio < 1.0) {
            return Err(Error::Config(format!("min_ratio must lie in (0, 1), got {min_ratio}")));
        }
        let h = (1.0 - min_ratio) / (num_points - 1) as f64;
        (0..num_points)
            .map(|k| if k + 1 == num_points { min_ratio } else { 1.0 - k as f64 * h })
            .collect()
    };
    Ok(LambdaPath {
        lambda_max,
        values: ratios.iter().map(|r| r * lambda_max).collect(),
        ratios,
    })
}

/// One accepted point of a solved path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub index: usize,
    pub ratio: f64,
    pub lambda: f64,
    pub mask: DiscardMask,
    /// Full KKT residual of the warm start the mask was built from.
    pub x_prev_kkt: f64,
    pub result: SolveResult,
    /// Full KKT residual of the accepted solution.
    pub kkt_residual: f64,
    /// Discarded features restored after a KKT violation.
    pub restored: usize,
    /// Column evaluations spent on this step, when the backend counts them.
    pub work: Option<u64>,
    pub wall_time: Duration,
}

impl PathStep {
    pub fn kept_count(&self) -> usize {
        self.mask.kept_count()
    }

    pub fn rejection_fraction(&self) -> f64 {
        self.mask.rejection_fraction()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRun {
    pub path: LambdaPath,
    pub steps: Vec<PathStep>,
}

impl PathRun {
    pub fn total_work(&self) -> Option<u64> {
        self.steps.iter().map(|s| s.work).sum()
    }

    pub fn total_time(&self) -> Duration {
        self.steps.iter().map(|s| s.wall_time).sum()
    }

    pub fn mean_rejection(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.rejection_fraction()).sum::<f64>() / self.steps.len() as f64
    }

    pub const CSV_HEADER: &'static str = "step,ratio,lambda,kept_count,rejection_fraction,\
x_prev_kkt_residual,objective,kkt_residual,nnz,iters,restored,work";

    pub fn csv_row(s: &PathStep) -> String {
        format!(
            "{},{:?},{:?},{},{:?},{:?},{:?},{:?},{},{},{},{}",
            s.index,
            s.ratio,
            s.lambda,
            s.kept_count(),
            s.rejection_fraction(),
            s.x_prev_kkt,
            s.result.objective,
            s.kkt_residual,
            s.result.x.nnz(),
            s.result.iters_used,
            s.restored,
            s.work.map(|w| w.to_string()).unwrap_or_default()
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for s in &self.steps {
            writeln!(w, "{}", Self::csv_row(s))?;
        }
        Ok(())
    }

    /// Wall times kept apart from the main report so that report is
    /// reproducible byte for byte.
    pub fn write_timing_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,lambda,wall_time_s")?;
        for s in &self.steps {
            writeln!(w, "{},{:?},{:?}", s.index, s.lambda, s.wall_time.as_secs_f64())?;
        }
        Ok(())
    }
}

/// A path solve that stopped early; `partial` holds the accepted steps.
#[derive(Debug)]
pub struct PathAbort {
    pub step: usize,
    pub error: Error,
    pub partial: PathRun,
}

impl std::fmt::Display for PathAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "path aborted at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for PathAbort {}

impl PathAbort {
    /// The underlying error; the step index is logged.
    pub fn into_error(self) -> Error {
        log::warn!("{self}");
        self.error
    }
}

/// Where a path is solved: a federation or the centralized reference.
pub trait PathBackend {
    fn feature_count(&self) -> usize;

    /// Computes `lambda_max` and any per-session screening state.
    fn start(&mut self, rule: ScreeningRule) -> Result<f64>;

    fn screen(
        &mut self,
        rule: ScreeningRule,
        lambda_k: f64,
        lambda_prev: f64,
        x_prev: &SparseVector,
    ) -> Result<DiscardMask>;

    fn oracle(&mut self) -> &mut dyn LassoOracle;

    /// Cumulative column evaluations, if counted.
    fn work(&mut self) -> Result<Option<u64>>;
}

pub struct FederatedBackend<'a, T: Transport> {
    oracle: FederatedOracle<'a, T>,
    session: Option<DedppSession>,
}

impl<'a, T: Transport> FederatedBackend<'a, T> {
    pub fn new(fed: &'a mut Federation<T>) -> Self {
        Self {
            oracle: FederatedOracle::new(fed),
            session: None,
        }
    }
}

impl<T: Transport> PathBackend for FederatedBackend<'_, T> {
    fn feature_count(&self) -> usize {
        self.oracle.feature_count()
    }

    fn start(&mut self, _rule: ScreeningRule) -> Result<f64> {
        let session = DedppSession::start(self.oracle.federation())?;
        let lm = session.lambda_max().value;
        self.session = Some(session);
        Ok(lm)
    }

    fn screen(
        &mut self,
        rule: ScreeningRule,
        lambda_k: f64,
        lambda_prev: f64,
        x_prev: &SparseVector,
    ) -> Result<DiscardMask> {
        let session = self
            .session
            .as_ref()
            .ok_or_else(|| Error::Protocol("screening before session start".into()))?;
        let p = self.oracle.feature_count();
        match rule {
            ScreeningRule::None => Ok(DiscardMask::keep_all(lambda_k, p, RuleOrigin::Unscreened)),
            ScreeningRule::Safe => dsafe_screen(&session.dsafe_state(), lambda_k),
            ScreeningRule::Edpp => {
                let fed = self.oracle.federation();
                Ok(session.screen(fed, lambda_k, lambda_prev, x_prev)?.0)
            }
        }
    }

    fn oracle(&mut self) -> &mut dyn LassoOracle {
        &mut self.oracle
    }

    fn work(&mut self) -> Result<Option<u64>> {
        Ok(Some(self.oracle.federation().work()?))
    }
}

pub struct CentralBackend<'a> {
    problem: &'a mut CentralProblem,
    edpp: Option<CentralEdpp>,
}

impl<'a> CentralBackend<'a> {
    pub fn new(problem: &'a mut CentralProblem) -> Self {
        Self {
            problem,
            edpp: None,
        }
    }
}

impl PathBackend for CentralBackend<'_> {
    fn feature_count(&self) -> usize {
        self.problem.cols()
    }

    fn start(&mut self, _rule: ScreeningRule) -> Result<f64> {
        let e = CentralEdpp::new(self.problem)?;
        let lm = e.lambda_max().value;
        self.edpp = Some(e);
        Ok(lm)
    }

    fn screen(
        &mut self,
        rule: ScreeningRule,
        lambda_k: f64,
        lambda_prev: f64,
        x_prev: &SparseVector,
    ) -> Result<DiscardMask> {
        let p = self.problem.cols();
        match rule {
            ScreeningRule::None => Ok(DiscardMask::keep_all(lambda_k, p, RuleOrigin::Unscreened)),
            ScreeningRule::Safe => safe_screen(self.problem, lambda_k),
            ScreeningRule::Edpp => {
                let e = self
                    .edpp
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("screening before session start".into()))?;
                Ok(e.screen(self.problem, lambda_k, lambda_prev, x_prev)?.0)
            }
        }
    }

    fn oracle(&mut self) -> &mut dyn LassoOracle {
        self.problem
    }

    fn work(&mut self) -> Result<Option<u64>> {
        Ok(None)
    }
}

/// Path length and spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSettings {
    pub num_points: usize,
    pub min_ratio: f64,
}

impl Default for PathSettings {
    fn default() -> Self {
        Self {
            num_points: 100,
            min_ratio: 0.05,
        }
    }
}

/// Screen-then-solve along the path over a federation.
pub fn solve_path<T: Transport>(
    fed: &mut Federation<T>,
    settings: PathSettings,
    config: &PathConfig,
) -> std::result::Result<PathRun, Box<PathAbort>> {
    solve_path_on(&mut FederatedBackend::new(fed), settings, config, &mut |_| {})
}

/// Path solve on any backend. `on_step` sees each accepted step as soon as
/// it is final.
pub fn solve_path_on<B: PathBackend + ?Sized>(
    backend: &mut B,
    settings: PathSettings,
    config: &PathConfig,
    on_step: &mut dyn FnMut(&PathStep),
) -> std::result::Result<PathRun, Box<PathAbort>> {
    let mut run = PathRun {
        path: LambdaPath {
            lambda_max: 0.0,
            ratios: Vec::new(),
            values: Vec::new(),
        },
        steps: Vec::new(),
    };
    match drive(backend, settings, config, &mut run, on_step) {
        Ok(()) => Ok(run),
        Err(error) => Err(Box::new(PathAbort {
            step: run.steps.len(),
            error,
            partial: run,
        })),
    }
}

fn drive<B: PathBackend + ?Sized>(
    backend: &mut B,
    settings: PathSettings,
    config: &PathConfig,
    run: &mut PathRun,
    on_step: &mut dyn FnMut(&PathStep),
) -> Result<()> {
    config.solver.validate()?;
    let p = backend.feature_count();
    let t0 = Instant::now();
    let lambda_max = backend.start(config.screening)?;
    run.path = build_path(lambda_max, settings.num_points, settings.min_ratio)?;
    let mut work_before = backend.work()?;

    // lambda_max: x = 0 by definition
    let x0 = SparseVector::zeros(p);
    let origin = match config.screening {
        ScreeningRule::None => RuleOrigin::Unscreened,
        ScreeningRule::Safe => RuleOrigin::DSafe,
        ScreeningRule::Edpp => RuleOrigin::DEdpp,
    };
    let mask0 = if config.screening == ScreeningRule::None {
        DiscardMask::keep_all(lambda_max, p, origin)
    } else {
        DiscardMask::discard_all(lambda_max, p, origin)
    };
    let oracle = backend.oracle();
    let rss0 = oracle.residual_sq(&x0)?;
    let g0 = oracle.gradient(&x0, ColumnSet::All)?;
    let kkt0 = kkt_from_gradient(&g0, &vec![0.0; p], lambda_max);
    let work_after = backend.work()?;
    let step0 = PathStep {
        index: 0,
        ratio: 1.0,
        lambda: lambda_max,
        mask: mask0,
        x_prev_kkt: kkt0,
        result: SolveResult {
            lambda: lambda_max,
            x: x0,
            objective: 0.5 * rss0,
            kkt_residual: kkt0,
            iters_used: 0,
            converged: true,
            lipschitz: 0.0,
        },
        kkt_residual: kkt0,
        restored: 0,
        work: delta(work_before, work_after),
        wall_time: t0.elapsed(),
    };
    work_before = work_after;
    on_step(&step0);
    run.steps.push(step0);

    let mut full_lipschitz: Option<f64> = None;
    for k in 1..run.path.values.len() {
        let t = Instant::now();
        let lambda = run.path.values[k];
        let prev = run.steps.last().expect("step 0 exists");
        let (lambda_prev, x_prev, x_prev_kkt) = (prev.lambda, prev.result.x.clone(), prev.kkt_residual);

        let screen = config.screening != ScreeningRule::None && x_prev_kkt <= config.screen_gate;
        if config.screening != ScreeningRule::None && !screen {
            info!("step {k}: previous KKT residual {x_prev_kkt:e} above gate, screening skipped");
        }
        let mut mask = if screen {
            backend.screen(config.screening, lambda, lambda_prev, &x_prev)?
        } else {
            DiscardMask::keep_all(lambda, p, RuleOrigin::Unscreened)
        };

        let mut restored = 0;
        let mut warm = x_prev;
        let (result, kkt) = loop {
            let all = mask.kept_count() == p;
            let mut cfg = config.solver.clone();
            if all && cfg.lipschitz.is_none() {
                if full_lipschitz.is_none() && cfg.step_rule == crate::solver::StepRule::FixedLipschitz {
                    full_lipschitz =
                        Some(estimate_lipschitz(backend.oracle(), ColumnSet::All, cfg.power_iters)?);
                }
                cfg.lipschitz = cfg.lipschitz.or(full_lipschitz);
            }
            let cols = if all {
                ColumnSet::All
            } else {
                ColumnSet::Subset(mask.kept())
            };
            let oracle = backend.oracle();
            let result = solve(oracle, lambda, cols, &warm, &cfg)?;
            if !result.converged {
                return Err(Error::NotConverged(format!(
                    "lambda = {lambda:e}: KKT residual {:e} after {} iterations",
                    result.kkt_residual, result.iters_used
                )));
            }
            if all {
                let kkt = result.kkt_residual;
                break (result, kkt);
            }
            let g = oracle.gradient(&result.x, ColumnSet::All)?;
            let kkt = kkt_from_gradient(&g, &result.x.to_dense(), lambda);
            let violators: Vec<usize> = mask
                .discarded()
                .into_iter()
                .filter(|&j| crate::solver::kkt_entry(g[j], 0.0, lambda) > config.solver.tolerance)
                .collect();
            if violators.is_empty() {
                break (result, kkt);
            }
            debug!("step {k}: restoring {} discarded features", violators.len());
            restored += violators.len();
            mask.restore(&violators);
            warm = result.x;
        };

        let work_after = backend.work()?;
        let step = PathStep {
            index: k,
            ratio: run.path.ratios[k],
            lambda,
            mask,
            x_prev_kkt,
            result,
            kkt_residual: kkt,
            restored,
            work: delta(work_before, work_after),
            wall_time: t.elapsed(),
        };
        work_before = work_after;
        debug!(
            "step {k}: lambda {lambda:e}, kept {}, iters {}, kkt {kkt:e}",
            step.kept_count(),
            step.result.iters_used
        );
        on_step(&step);
        run.steps.push(step);
    }
    Ok(())
}

fn delta(before: Option<u64>, after: Option<u64>) -> Option<u64> {
    Some(after? - before?)
}
