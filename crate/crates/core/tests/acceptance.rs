//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p fedlasso --test acceptance` runs all eight; pass criterion
//! numbers after `--` to run a subset.

mod common;

use std::time::Instant;

use common::*;
use fedlasso::central::CentralProblem;
use fedlasso::data::{
    gen_synthetic, impute_and_encode, maf_filter, partition, write_federation, ShardManifest,
    SyntheticConfig, MANIFEST_FILE,
};
use fedlasso::kernel::SparseVector;
use fedlasso::pipeline::{
    compare_screening, solve_path, solve_path_on, stability_select, standardize, CentralBackend,
    PathConfig, PathRun, PathSettings, ScreeningRule, StabilityConfig,
};
use fedlasso::protocol::{privacy_audit, Federation, Message, MessageKind, Transport};
use fedlasso::screening::{compute_lambda_max, DedppSession};
use fedlasso::solver::{
    reference_solve, solve_with_observer, ColumnSet, FederatedOracle, LassoOracle, SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 8] = [
        (1, "screening safety", screening_safety),
        (2, "distributed-centralized equivalence", equivalence),
        (3, "lambda_max exactness", lambda_max_exact),
        (4, "solver optimality", solver_optimality),
        (5, "screening benefit at desk scale", screening_benefit),
        (6, "stability selection recovery", stability_recovery),
        (7, "privacy audit", privacy),
        (8, "determinism", determinism),
    ];
    let mut failed = 0;
    for (k, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!(
            "criterion {k} [{name}]: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

const SHARD_CHOICES: [usize; 4] = [1, 2, 3, 5];

fn ten_point() -> PathSettings {
    PathSettings {
        num_points: 10,
        min_ratio: 0.05,
    }
}

fn path_config(rule: ScreeningRule) -> PathConfig {
    PathConfig {
        screening: rule,
        ..PathConfig::default()
    }
}

/// 100 random instances, 10-point paths: no feature discarded by D-EDPP or
/// D-SAFE is nonzero in the coordinate-descent solution.
fn screening_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // unsafe discards and checked discards for: path D-EDPP, D-SAFE, D-EDPP from the oracle solution
    let mut unsafe_ = [0usize; 3];
    let mut discards = [0usize; 3];
    let mut worst: f64 = 0.0;
    // x*(lambda_max) = 0 by definition; the oracle's own summation order can
    // leave ~1e-16 on the pivot feature there
    let mut boundary = 0usize;
    let mut boundary_worst: f64 = 0.0;
    let mut checked = 0usize;
    for inst in 0..100u64 {
        let n = rng.random_range(20..=100);
        let p = rng.random_range(50..=500);
        let m = SHARD_CHOICES[rng.random_range(0..4)];
        let mat = gaussian_matrix(1000 + inst, n, p);
        let shards = split(&mat, m, inst);
        let problem = central(&shards);
        let mut fed = sim(&shards);

        let edpp = solve_path(&mut fed, ten_point(), &path_config(ScreeningRule::Edpp)).unwrap();
        let safe = solve_path(&mut fed, ten_point(), &path_config(ScreeningRule::Safe)).unwrap();
        let refs: Vec<Vec<f64>> = edpp
            .path
            .values
            .iter()
            .map(|&l| {
                let r = reference_solve(problem.values(), problem.rows(), problem.cols(), problem.response(), l)
                    .unwrap();
                assert!(r.kkt_residual <= 1e-10);
                r.x
            })
            .collect();

        let mut tally = |rule: usize, step: usize, discarded: Vec<usize>, x_ref: &[f64]| {
            for j in discarded {
                discards[rule] += 1;
                if x_ref[j].abs() > 0.0 && step == 0 {
                    boundary += 1;
                    boundary_worst = boundary_worst.max(x_ref[j].abs());
                } else if x_ref[j].abs() > 0.0 {
                    unsafe_[rule] += 1;
                    worst = worst.max(x_ref[j].abs());
                }
            }
        };
        for (rule, run) in [&edpp, &safe].into_iter().enumerate() {
            for (step, x_ref) in run.steps.iter().zip(&refs) {
                tally(rule, step.index, step.mask.discarded(), x_ref);
            }
        }
        let session = DedppSession::start(&mut fed).unwrap();
        for k in 1..refs.len() {
            let lam = edpp.path.values[k];
            let prev = SparseVector::from_dense(&refs[k - 1]);
            let (mask, _) = session.screen(&mut fed, lam, edpp.path.values[k - 1], &prev).unwrap();
            tally(2, k, mask.discarded(), &refs[k]);
        }
        checked += 1;
    }
    let total: usize = unsafe_.iter().sum();
    outcome(
        total == 0 && checked == 100,
        format!(
            "{checked} instances; unsafe/checked discards: D-EDPP on path {}/{}, D-SAFE {}/{}, \
D-EDPP from oracle solution {}/{}; largest unsafe |x_ref| {worst:.1e}; \
{boundary} oracle entries at lambda_max below {boundary_worst:.1e}",
            unsafe_[0], discards[0], unsafe_[1], discards[1], unsafe_[2], discards[2]
        ),
    )
}

fn same_run(a: &PathRun, b: &PathRun) -> bool {
    a.path == b.path
        && a.steps.len() == b.steps.len()
        && a.steps.iter().zip(&b.steps).all(|(s, t)| {
            s.mask.kept() == t.mask.kept()
                && s.mask.lambda().to_bits() == t.mask.lambda().to_bits()
                && bits(&s.result.x.to_dense()) == bits(&t.result.x.to_dense())
                && s.result.objective.to_bits() == t.result.objective.to_bits()
                && s.result.iters_used == t.result.iters_used
                && s.kkt_residual.to_bits() == t.kkt_residual.to_bits()
        })
}

fn iterates<O: LassoOracle + ?Sized>(oracle: &mut O, lambda: f64) -> Vec<Vec<u64>> {
    let mut seen = Vec::new();
    let p = oracle.feature_count();
    let cfg = SolverConfig {
        max_iters: 300,
        ..SolverConfig::default()
    };
    solve_with_observer(oracle, lambda, ColumnSet::All, &SparseVector::zeros(p), &cfg, &mut |_, z| {
        seen.push(bits(z))
    })
    .unwrap();
    seen
}

/// 20 instances: D-EDPP masks, path solutions and every FISTA iterate agree
/// bit-for-bit with the centralized computation, over both transports.
fn equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = Vec::new();
    let mut iterates_compared = 0usize;
    for inst in 0..20u64 {
        let n = rng.random_range(20..=100);
        let p = rng.random_range(50..=300);
        let m = SHARD_CHOICES[rng.random_range(0..4)];
        let shards = split(&gaussian_matrix(2000 + inst, n, p), m, inst);
        let mut problem = central(&shards);
        let cfg = path_config(ScreeningRule::Edpp);
        let settings = ten_point();
        let reference =
            solve_path_on(&mut CentralBackend::new(&mut problem), settings, &cfg, &mut |_| {}).unwrap();
        let lambda = 0.3 * reference.path.lambda_max;
        let central_iters = iterates(&mut problem, lambda);

        let mut sim_fed = sim(&shards);
        let sim_run = solve_path(&mut sim_fed, settings, &cfg).unwrap();
        let sim_iters = iterates(&mut FederatedOracle::new(&mut sim_fed), lambda);

        let mut sock = SocketFed::new(&shards);
        let sock_run = solve_path(&mut sock.fed, settings, &cfg).unwrap();
        let sock_iters = iterates(&mut FederatedOracle::new(&mut sock.fed), lambda);
        sock.close();

        if !same_run(&reference, &sim_run) {
            mismatches.push(format!("{inst}:sim-path"));
        }
        if !same_run(&reference, &sock_run) {
            mismatches.push(format!("{inst}:socket-path"));
        }
        if central_iters != sim_iters {
            mismatches.push(format!("{inst}:sim-iterates"));
        }
        if central_iters != sock_iters {
            mismatches.push(format!("{inst}:socket-iterates"));
        }
        iterates_compared += central_iters.len();
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "20 instances x 2 transports, {iterates_compared} FISTA iterates per transport; mismatches: {mismatches:?}"
        ),
    )
}

/// Distributed lambda_max equals the centralized max |A_j^T y| bit-for-bit.
fn lambda_max_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    let mut max_naive_gap: f64 = 0.0;
    let total = 120u64;
    for inst in 0..total {
        let n = rng.random_range(20..=100);
        let p = rng.random_range(50..=500);
        let m = SHARD_CHOICES[rng.random_range(0..4)];
        let mat = gaussian_matrix(3000 + inst, n, p);
        let shards = split(&mat, m, inst);
        let problem = central(&shards);
        let want = problem
            .correlations()
            .unwrap()
            .iter()
            .fold(0.0f64, |a, c| a.max(c.abs()));
        let got = compute_lambda_max(&mut sim(&shards)).unwrap().value;
        let mut sock = SocketFed::new(&shards);
        let got_sock = compute_lambda_max(&mut sock.fed).unwrap().value;
        sock.close();
        bad += usize::from(got.to_bits() != want.to_bits() || got_sock.to_bits() != want.to_bits());
        // informational: distance to a plain left-to-right sum over all rows
        let naive = (0..p)
            .map(|j| {
                (0..n)
                    .map(|i| problem.values()[j * n + i] * problem.response()[i])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0f64, f64::max);
        max_naive_gap = max_naive_gap.max((naive - want).abs() / want);
    }
    outcome(
        bad == 0,
        format!(
            "{total} instances x 2 transports, {bad} inexact; max relative gap to an unordered sum {max_naive_gap:.1e}"
        ),
    )
}

fn full_objective(problem: &CentralProblem, lambda: f64, x: &[f64]) -> f64 {
    let xs = SparseVector::from_dense(x);
    0.5 * problem.residual_sq(&xs).unwrap() + lambda * xs.l1_norm()
}

/// Path objectives never exceed the oracle's (1e-10 relative) and FISTA
/// stays under 2 L ||x0 - x*||^2 / (k + 1)^2.
fn solver_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_ratio: f64 = 0.0;
    let mut bound_violations = 0;
    let mut points = 0;
    let mut iterations = 0;
    for inst in 0..10u64 {
        let n = rng.random_range(30..=100);
        let p = rng.random_range(50..=300);
        let m = SHARD_CHOICES[rng.random_range(0..4)];
        let shards = split(&gaussian_matrix(4000 + inst, n, p), m, inst);
        let problem = central(&shards);
        let mut fed = sim(&shards);
        let run = solve_path(&mut fed, ten_point(), &path_config(ScreeningRule::Edpp)).unwrap();
        for step in &run.steps {
            let r = reference_solve(problem.values(), n, p, problem.response(), step.lambda).unwrap();
            let gap = (step.result.objective - r.objective) / r.objective;
            worst_gap = worst_gap.max(gap);
            points += 1;
        }

        // plain FISTA from zero at 0.2 lambda_max
        let lambda = 0.2 * run.path.lambda_max;
        let opt = reference_solve(problem.values(), n, p, problem.response(), lambda).unwrap();
        let cfg = SolverConfig {
            restart: false,
            tolerance: 1e-12,
            max_iters: 2000,
            ..SolverConfig::default()
        };
        let mut oracle = FederatedOracle::new(&mut fed);
        let mut zs = Vec::new();
        let res = solve_with_observer(&mut oracle, lambda, ColumnSet::All, &SparseVector::zeros(p), &cfg, &mut |k, z| {
            zs.push((k, z.to_vec()))
        })
        .unwrap();
        let dist2: f64 = opt.x.iter().map(|v| v * v).sum();
        for (k, z) in zs {
            let excess = full_objective(&problem, lambda, &z) - opt.objective;
            let bound = 2.0 * res.lipschitz * dist2 / ((k + 1) as f64).powi(2);
            // rounding allowance: 1e-12 of the optimal value
            if excess > bound + 1e-12 * opt.objective {
                bound_violations += 1;
            }
            if bound > 0.0 {
                worst_ratio = worst_ratio.max(excess / bound);
            }
            iterations += 1;
        }
    }
    outcome(
        worst_gap <= 1e-10 && bound_violations == 0,
        format!(
            "{points} path points, worst relative objective excess {worst_gap:.2e} (limit 1e-10); \
{iterations} FISTA iterates, {bound_violations} above the O(1/k^2) bound, max excess/bound {worst_ratio:.3}"
        ),
    )
}

/// 500 x 100,000 synthetic genotypes, 3 shards, 100-point path 1.00 -> 0.05.
fn screening_benefit() -> Outcome {
    let ds = gen_synthetic(&SyntheticConfig {
        subjects: 500,
        snps: 100_000,
        support_size: 10,
        snr: 10.0,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let (ds, _) = maf_filter(&ds, 0.05).unwrap();
    let shards = partition(&impute_and_encode(&ds).unwrap(), 3, &[], 5).unwrap();
    drop(ds);
    let mut fed = sim(&shards);
    drop(shards);
    standardize(&mut fed).unwrap();
    let mut cfg = path_config(ScreeningRule::Edpp);
    cfg.solver.tolerance = CRITERION5_TOLERANCE;
    let settings = PathSettings {
        num_points: 100,
        min_ratio: 0.05,
    };
    let cmp = compare_screening(&mut fed, settings, &cfg).unwrap();
    let ratio = cmp.time_screened().as_secs_f64() / cmp.time_unscreened().as_secs_f64();
    let rejection = cmp.mean_rejection();
    let gap = cmp.max_objective_gap();
    outcome(
        rejection >= 0.5 && ratio <= 0.5 && gap <= 1e-10,
        format!(
            "p = {}, mean rejection {rejection:.4} (>= 0.5), time {:.1}s vs {:.1}s = {ratio:.3}x (<= 0.5), \
max relative objective gap {gap:.2e} (<= 1e-10)",
            cmp.feature_count,
            cmp.time_screened().as_secs_f64(),
            cmp.time_unscreened().as_secs_f64()
        ),
    )
}

const CRITERION5_TOLERANCE: f64 = 1e-7;

fn stability_dataset() -> (Shards, Vec<usize>) {
    let ds = gen_synthetic(&SyntheticConfig {
        subjects: 500,
        snps: 1000,
        support_size: 10,
        snr: 10.0,
        seed: 6,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let (ds, _) = maf_filter(&ds, 0.05).unwrap();
    let enc = impute_and_encode(&ds).unwrap();
    let support = enc.truth.as_ref().unwrap().support.clone();
    (partition(&enc, 3, &[326.0 / 717.0, 215.0 / 717.0, 176.0 / 717.0], 6).unwrap(), support)
}

fn stability_config() -> StabilityConfig {
    StabilityConfig {
        rounds: 50,
        subsample_size: 350,
        seed: 6,
        path: STABILITY_PATH,
        standardize: true,
    }
}

const STABILITY_PATH: PathSettings = PathSettings {
    num_points: 20,
    min_ratio: 0.2,
};

/// 50 rounds of 350-subject subsamples recover at least 8 of the 10 planted
/// SNPs in the top 10.
fn stability_recovery() -> Outcome {
    let (shards, support) = stability_dataset();
    let mut fed = sim(&shards);
    let prof = stability_select(&mut fed, &stability_config(), &path_config(ScreeningRule::Edpp)).unwrap();
    let top = prof.top(10);
    let hits = top.iter().filter(|j| support.contains(j)).count();
    outcome(
        hits >= 8,
        format!("{hits}/10 of the top-10 are planted (>= 8); top-10 counts {:?}", top.iter().map(|&j| prof.counts[j]).collect::<Vec<_>>()),
    )
}

/// Full path and stability transcripts pass the audit; a planted raw
/// column reply is flagged.
fn privacy() -> Outcome {
    let (shards, _) = stability_dataset();
    let mut fed = sim(&shards);
    fed.record_transcript();
    solve_path(&mut fed, PathSettings::default(), &path_config(ScreeningRule::Edpp)).unwrap();
    let cfg = StabilityConfig {
        rounds: 3,
        ..stability_config()
    };
    stability_select(&mut fed, &cfg, &path_config(ScreeningRule::Edpp)).unwrap();
    let clean = privacy_audit(fed.transcript().unwrap());

    let raw_column: Vec<f64> = shards[1].0.values()[..shards[1].0.rows()].to_vec();
    fed.transport_mut()
        .inject_reply(1, Message::new(0, MessageKind::VectorSum, "R", raw_column));
    let _ = compute_lambda_max(&mut fed);
    let planted = privacy_audit(fed.transcript().unwrap());
    let caught = planted.violations.len() == 1 && planted.violations[0].worker == 1;
    outcome(
        clean.passed() && caught,
        format!(
            "clean transcript: {} messages, {} violations; planted raw column detected: {caught}",
            clean.messages,
            clean.violations.len()
        ),
    )
}

fn outputs<T: Transport>(fed: &mut Federation<T>) -> Vec<u8> {
    let mut out = Vec::new();
    let run = solve_path(fed, ten_point(), &path_config(ScreeningRule::Edpp)).unwrap();
    run.write_csv(&mut out).unwrap();
    let cfg = StabilityConfig {
        rounds: 5,
        ..stability_config()
    };
    stability_select(fed, &cfg, &path_config(ScreeningRule::Edpp))
        .unwrap()
        .write_csv(&mut out)
        .unwrap();
    out
}

/// Same seed and config: identical path and stability CSV bytes over three
/// runs from disk and over both transports.
fn determinism() -> Outcome {
    let mut runs = Vec::new();
    for _ in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let (shards, _) = stability_dataset();
        let ds_seed = 6;
        write_federation(dir.path(), &shards, ds_seed, Vec::new(), None).unwrap();
        let manifest = ShardManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        manifest.verify(dir.path()).unwrap();
        let loaded = manifest.load_shards(dir.path()).unwrap();
        runs.push(outputs(&mut sim(&loaded)));
        let mut sock = SocketFed::new(&loaded);
        runs.push(outputs(&mut sock.fed));
        sock.close();
    }
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        identical,
        format!("{} outputs (3 runs x 2 transports), {} bytes each, identical: {identical}", runs.len(), runs[0].len()),
    )
}
