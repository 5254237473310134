mod common;

use common::*;
use fedlasso::data::{merge_by_manifest, write_federation, ShardManifest, MANIFEST_FILE};
use fedlasso::pipeline::{
    solve_path, solve_path_on, stability_select, standardize, CentralBackend, PathConfig, PathRun, PathSettings,
    ScreeningRule, StabilityConfig,
};
use fedlasso::protocol::{privacy_audit, DeliveryOrder, Federation, SimTransport};
use fedlasso::solver::reference_solve;

fn csv(run: &PathRun) -> String {
    let mut buf = Vec::new();
    run.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn settings(n: usize) -> PathSettings {
    PathSettings {
        num_points: n,
        min_ratio: 0.1,
    }
}

#[test]
fn delivery_order_does_not_change_results() {
    let shards = split(&gaussian_matrix(11, 60, 120), 4, 11);
    let cfg = PathConfig::default();
    let base = csv(&solve_path(&mut sim(&shards), settings(12), &cfg).unwrap());
    for order in [DeliveryOrder::Reversed, DeliveryOrder::Shuffled(3), DeliveryOrder::Shuffled(99)] {
        let transport = SimTransport::new(institutions(&shards)).with_delivery(order);
        let mut fed = Federation::new(transport, config(&shards)).unwrap();
        assert_eq!(csv(&solve_path(&mut fed, settings(12), &cfg).unwrap()), base, "{order:?}");
    }
}

#[test]
fn federated_path_matches_central_backend() {
    for seed in 0..4 {
        let shards = split(&gaussian_matrix(seed, 50, 90), 3, seed);
        let cfg = PathConfig::default();
        let fed_run = solve_path(&mut sim(&shards), settings(10), &cfg).unwrap();
        let mut problem = central(&shards);
        let central_run = solve_path_on(&mut CentralBackend::new(&mut problem), settings(10), &cfg, &mut |_| {}).unwrap();
        assert_eq!(fed_run.steps.len(), central_run.steps.len());
        for (a, b) in fed_run.steps.iter().zip(&central_run.steps) {
            assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
            assert_eq!(a.mask.kept(), b.mask.kept());
            assert_eq!(bits(&a.result.x.to_dense()), bits(&b.result.x.to_dense()));
        }
    }
}

#[test]
fn discarded_features_are_zero_at_the_reference_solution() {
    for seed in 20..26 {
        let m = gaussian_matrix(seed, 40, 150);
        let shards = split(&m, 3, seed);
        let problem = central(&shards);
        for rule in [ScreeningRule::Edpp, ScreeningRule::Safe] {
            let cfg = PathConfig {
                screening: rule,
                ..PathConfig::default()
            };
            let run = solve_path(&mut sim(&shards), settings(8), &cfg).unwrap();
            for step in run.steps.iter().skip(1) {
                let r = reference_solve(problem.values(), problem.rows(), problem.cols(), problem.response(), step.lambda)
                    .unwrap();
                for j in step.mask.discarded() {
                    assert_eq!(r.x[j], 0.0, "seed {seed} {rule:?} step {} feature {j}", step.index);
                }
            }
        }
    }
}

#[test]
fn screening_rules_agree_on_objectives() {
    let shards = split(&gaussian_matrix(31, 70, 200), 3, 31);
    let mut objectives = Vec::new();
    let mut work = Vec::new();
    for rule in [ScreeningRule::None, ScreeningRule::Safe, ScreeningRule::Edpp] {
        let cfg = PathConfig {
            screening: rule,
            ..PathConfig::default()
        };
        let run = solve_path(&mut sim(&shards), settings(15), &cfg).unwrap();
        objectives.push(run.steps.iter().map(|s| s.result.objective).collect::<Vec<_>>());
        work.push(run.total_work().unwrap());
    }
    for k in 0..15 {
        let base = objectives[0][k];
        for o in &objectives[1..] {
            assert!((o[k] - base).abs() <= 1e-9 * base.abs().max(1.0));
        }
    }
    assert!(work[2] <= work[0] && work[1] <= work[0], "{work:?}");
}

#[test]
fn socket_transport_matches_simulation() {
    let shards = split(&gaussian_matrix(41, 45, 80), 3, 41);
    let cfg = PathConfig::default();
    let expected = csv(&solve_path(&mut sim(&shards), settings(10), &cfg).unwrap());
    let mut sock = SocketFed::new(&shards);
    let got = csv(&solve_path(&mut sock.fed, settings(10), &cfg).unwrap());
    sock.close();
    assert_eq!(got, expected);
}

#[test]
fn standardized_path_converges() {
    let shards = split(&gaussian_matrix(51, 80, 100), 2, 51);
    let mut fed = sim(&shards);
    standardize(&mut fed).unwrap();
    let cfg = PathConfig::default();
    let run = solve_path(&mut fed, settings(10), &cfg).unwrap();
    assert!(run.steps.iter().all(|s| s.kkt_residual <= cfg.solver.tolerance));
    assert!(run.steps.last().unwrap().result.x.nnz() >= 3);
}

#[test]
fn stability_is_deterministic_and_audits_clean() {
    let shards = split(&gaussian_matrix(61, 90, 60), 3, 61);
    let cfg = StabilityConfig {
        rounds: 4,
        subsample_size: 60,
        seed: 61,
        path: PathSettings {
            num_points: 6,
            min_ratio: 0.2,
        },
        standardize: true,
    };
    let mut fed = sim(&shards);
    fed.record_transcript();
    let a = stability_select(&mut fed, &cfg, &PathConfig::default()).unwrap();
    let report = privacy_audit(fed.transcript().unwrap());
    assert!(report.passed(), "{:?}", report.violations);
    let b = stability_select(&mut sim(&shards), &cfg, &PathConfig::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.counts.iter().all(|&c| c <= 4));
    assert_eq!(a.per_lambda.len(), 6);
}

#[test]
fn manifest_round_trip_and_tamper_detection() {
    let m = gaussian_matrix(71, 33, 12);
    let shards = split(&m, 3, 71);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_federation(dir.path(), &shards, 71, m.snp_ids.clone(), None).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    assert_eq!(ShardManifest::load(&path).unwrap(), manifest);
    assert_eq!(merge_by_manifest(&path).unwrap(), m);

    let shard = dir.path().join(&manifest.shards[1].file);
    let mut bytes = std::fs::read(&shard).unwrap();
    bytes[40] ^= 1;
    std::fs::write(&shard, bytes).unwrap();
    assert!(manifest.verify(dir.path()).is_err());
    assert!(manifest.load_shards(dir.path()).is_err());
}
