use std::io::Write;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{encode_indices, tags, Federation, Transport};

use super::path::{solve_path, PathConfig, PathSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub rounds: usize,
    pub subsample_size: usize,
    pub seed: u64,
    pub path: PathSettings,
    /// Center and scale features and response on every subsample.
    pub standardize: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            subsample_size: 350,
            seed: 0,
            path: PathSettings::default(),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityProfile {
    pub rounds: usize,
    pub subsample_size: usize,
    /// Rounds in which each feature was nonzero anywhere on the path.
    pub counts: Vec<u32>,
    /// `per_lambda[k][j]`: rounds with feature `j` nonzero at path point `k`.
    pub per_lambda: Vec<Vec<u32>>,
    /// Features by count descending, ties by ascending index.
    pub ranking: Vec<usize>,
}

impl StabilityProfile {
    pub fn new(rounds: usize, subsample_size: usize, counts: Vec<u32>, per_lambda: Vec<Vec<u32>>) -> Self {
        let ranking = rank_by_count(&counts);
        Self {
            rounds,
            subsample_size,
            counts,
            per_lambda,
            ranking,
        }
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    pub fn frequency(&self, j: usize) -> f64 {
        self.counts[j] as f64 / self.rounds as f64
    }

    /// `feature_id,count,frequency,rank`, one row per feature in rank order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "feature_id,count,frequency,rank")?;
        for (rank, &j) in self.ranking.iter().enumerate() {
            writeln!(w, "{j},{},{:?},{}", self.counts[j], self.frequency(j), rank + 1)?;
        }
        Ok(())
    }

    /// Per-path-point counts, one row per (point, feature) with a nonzero count.
    pub fn write_per_lambda_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,feature_id,count")?;
        for (k, row) in self.per_lambda.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    writeln!(w, "{k},{j},{c}")?;
                }
            }
        }
        Ok(())
    }
}

pub fn rank_by_count(counts: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// Broadcasts centering/scaling computed from aggregated column sums and
/// squared norms; afterwards every column has mean 0 and unit norm and the
/// response has mean 0.
pub fn standardize<T: Transport>(fed: &mut Federation<T>) -> Result<()> {
    let p = fed.feature_count();
    let n = fed.aggregate_scalar(tags::ROWS, Vec::new())?;
    if n < 1.0 {
        return Err(Error::EmptyDataset("no rows to standardize".into()));
    }
    let sums = fed.aggregate_vector(tags::COLUMN_SUMS, Vec::new(), p)?;
    let sq = fed.aggregate_vector(tags::COLUMN_NORMS, Vec::new(), p)?;
    let ysum = fed.aggregate_scalar(tags::RESPONSE_SUM, Vec::new())?;
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let scales: Vec<f64> = sq
        .iter()
        .zip(&means)
        .map(|(q, m)| {
            let centered = q - n * m * m;
            if centered > 1e-12 * q.max(1.0) {
                1.0 / centered.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut payload = means;
    payload.extend(scales);
    payload.push(ysum / n);
    fed.broadcast(tags::STANDARDIZE, payload)
}

/// Subsampled path solves; counts how often each feature is selected.
pub fn stability_select<T: Transport>(
    fed: &mut Federation<T>,
    config: &StabilityConfig,
    path_config: &PathConfig,
) -> Result<StabilityProfile> {
    let total = fed.config().total_rows as usize;
    if config.rounds == 0 {
        return Err(Error::Config("stability selection needs rounds >= 1".into()));
    }
    if config.subsample_size == 0 || config.subsample_size > total {
        return Err(Error::Config(format!(
            "subsample size {} must lie in 1..={total}",
            config.subsample_size
        )));
    }
    let p = fed.feature_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut counts = vec![0u32; p];
    let mut per_lambda = vec![vec![0u32; p]; config.path.num_points];
    for round in 0..config.rounds {
        let mut ids = rand::seq::index::sample(&mut rng, total, config.subsample_size).into_vec();
        ids.sort_unstable();
        fed.broadcast(tags::RESET, Vec::new())?;
        fed.broadcast(tags::SUBSAMPLE, encode_indices(ids))?;
        if config.standardize {
            standardize(fed)?;
        }
        let run = solve_path(fed, config.path, path_config).map_err(|a| {
            log::warn!("stability round {round}: {a}");
            a.into_error()
        })?;
        let mut selected = vec![false; p];
        for (k, step) in run.steps.iter().enumerate() {
            for &j in step.result.x.indices() {
                per_lambda[k][j] += 1;
                selected[j] = true;
            }
        }
        for (c, s) in counts.iter_mut().zip(&selected) {
            *c += u32::from(*s);
        }
        info!(
            "stability round {round}: {} features selected",
            selected.iter().filter(|&&s| s).count()
        );
    }
    fed.broadcast(tags::RESET, Vec::new())?;
    Ok(StabilityProfile::new(config.rounds, config.subsample_size, counts, per_lambda))
}
