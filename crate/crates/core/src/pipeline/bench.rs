use std::time::Duration;

use crate::error::Result;
use crate::protocol::{Federation, Transport};

use super::path::{solve_path, PathConfig, PathRun, PathSettings, ScreeningRule};

/// The same path solved with and without screening.
#[derive(Debug, Clone)]
pub struct ScreeningComparison {
    pub feature_count: usize,
    pub screened: PathRun,
    pub unscreened: PathRun,
}

impl ScreeningComparison {
    pub fn time_screened(&self) -> Duration {
        self.screened.total_time()
    }

    pub fn time_unscreened(&self) -> Duration {
        self.unscreened.total_time()
    }

    /// Unscreened over screened wall time.
    pub fn speedup(&self) -> f64 {
        self.time_unscreened().as_secs_f64() / self.time_screened().as_secs_f64()
    }

    pub fn mean_rejection(&self) -> f64 {
        self.screened.mean_rejection()
    }

    /// Largest relative objective gap over the path points.
    pub fn max_objective_gap(&self) -> f64 {
        self.screened
            .steps
            .iter()
            .zip(&self.unscreened.steps)
            .map(|(a, b)| {
                let (fa, fb) = (a.result.objective, b.result.objective);
                (fa - fb).abs() / fa.abs().max(fb.abs()).max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    pub const CSV_HEADER: &'static str = "features,time_screened_s,time_unscreened_s,speedup,\
mean_rejection,work_screened,work_unscreened,max_objective_gap";

    pub fn csv_row(&self) -> String {
        let work = |r: &PathRun| r.total_work().map(|w| w.to_string()).unwrap_or_default();
        format!(
            "{},{:?},{:?},{:?},{:?},{},{},{:?}",
            self.feature_count,
            self.time_screened().as_secs_f64(),
            self.time_unscreened().as_secs_f64(),
            self.speedup(),
            self.mean_rejection(),
            work(&self.screened),
            work(&self.unscreened),
            self.max_objective_gap()
        )
    }
}

/// Solves the path with `config.screening` (EDPP when it is `None`) and
/// again without screening.
pub fn compare_screening<T: Transport>(
    fed: &mut Federation<T>,
    settings: PathSettings,
    config: &PathConfig,
) -> Result<ScreeningComparison> {
    let mut on = config.clone();
    if on.screening == ScreeningRule::None {
        on.screening = ScreeningRule::Edpp;
    }
    let off = PathConfig {
        screening: ScreeningRule::None,
        ..config.clone()
    };
    let screened = solve_path(fed, settings, &on).map_err(|a| a.into_error())?;
    let unscreened = solve_path(fed, settings, &off).map_err(|a| a.into_error())?;
    Ok(ScreeningComparison {
        feature_count: fed.feature_count(),
        screened,
        unscreened,
    })
}

