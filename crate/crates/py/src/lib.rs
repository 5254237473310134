//! Python bindings: synthetic data, federations over the in-process or TCP
//! transport, path solves, stability selection and the privacy audit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::time::Duration;

use fedlasso::data::{self, EncodedMatrix, GenotypeDataset, ShardManifest, SyntheticConfig};
use fedlasso::pipeline::{self, PathConfig, PathRun, PathSettings, ScreeningRule, StabilityConfig, StabilityProfile};
use fedlasso::protocol::{privacy_audit, Transcript};
use fedlasso::screening::compute_lambda_max;
use fedlasso::solver::{self, flqm_solve, SolverConfig, StepRule};
use fedlasso::{DiscardMask, Federation, FeatureShard, Institution, ResponseShard, RuleOrigin, SimTransport, SocketTransport, SparseVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

create_exception!(fedlasso, FedlassoError, PyException);

fn err(e: fedlasso::Error) -> PyErr {
    FedlassoError::new_err(e.to_string())
}

fn to_json(py: Python<'_>, s: String) -> PyResult<Bound<'_, PyAny>> {
    py.import("json")?.call_method1("loads", (s,))
}

/// Raw 0/1/2 genotypes with a response.
#[pyclass(module = "fedlasso")]
struct Genotypes {
    inner: GenotypeDataset,
}

#[pymethods]
impl Genotypes {
    #[getter]
    fn subjects(&self) -> usize {
        self.inner.subjects
    }

    #[getter]
    fn snps(&self) -> usize {
        self.inner.snps
    }

    #[getter]
    fn snp_ids(&self) -> Vec<usize> {
        self.inner.snp_ids.clone()
    }

    #[getter]
    fn response(&self) -> Vec<f64> {
        self.inner.response.clone()
    }

    /// Planted support as SNP column indices, or None for imported data.
    #[getter]
    fn truth_support(&self) -> Option<Vec<usize>> {
        self.inner.truth.as_ref().map(|t| t.support.clone())
    }

    #[getter]
    fn truth_coefficients(&self) -> Option<Vec<f64>> {
        self.inner.truth.as_ref().map(|t| t.coefficients.clone())
    }

    /// Codes of one SNP; 255 marks a missing call.
    fn snp(&self, j: usize) -> PyResult<Vec<u8>> {
        if j >= self.inner.snps {
            return Err(PyValueError::new_err(format!("SNP {j} out of range")));
        }
        Ok(self.inner.snp(j).to_vec())
    }

    fn minor_allele_frequency(&self, j: usize) -> PyResult<Option<f64>> {
        if j >= self.inner.snps {
            return Err(PyValueError::new_err(format!("SNP {j} out of range")));
        }
        Ok(self.inner.minor_allele_frequency(j))
    }

    fn maf_filter(&self, threshold: f64) -> PyResult<Genotypes> {
        let (inner, _) = data::maf_filter(&self.inner, threshold).map_err(err)?;
        Ok(Genotypes { inner })
    }

    /// Mean-imputes missing calls and returns the numeric design.
    fn encode(&self) -> PyResult<Matrix> {
        Ok(Matrix {
            inner: data::impute_and_encode(&self.inner).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Genotypes(subjects={}, snps={})", self.inner.subjects, self.inner.snps)
    }
}

#[pyfunction]
#[pyo3(signature = (subjects=500, snps=1000, support_size=10, snr=10.0, maf_min=0.05, maf_max=0.5, missing_rate=0.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn gen_synthetic(
    subjects: usize,
    snps: usize,
    support_size: usize,
    snr: f64,
    maf_min: f64,
    maf_max: f64,
    missing_rate: f64,
    seed: u64,
) -> PyResult<Genotypes> {
    let cfg = SyntheticConfig {
        subjects,
        snps,
        support_size,
        snr,
        maf_range: (maf_min, maf_max),
        missing_rate,
        seed,
    };
    Ok(Genotypes {
        inner: data::gen_synthetic(&cfg).map_err(err)?,
    })
}

/// Dense design matrix plus response.
#[pyclass(module = "fedlasso")]
struct Matrix {
    inner: EncodedMatrix,
}

#[pymethods]
impl Matrix {
    /// From row lists; `rows[i][j]` is subject `i`, feature `j`.
    #[new]
    fn new(rows: Vec<Vec<f64>>, response: Vec<f64>) -> PyResult<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if n == 0 || p == 0 || rows.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err("rows must be a non-empty rectangular list"));
        }
        if response.len() != n {
            return Err(PyValueError::new_err(format!("{} responses for {n} rows", response.len())));
        }
        let mut values = vec![0.0; n * p];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                values[j * n + i] = v;
            }
        }
        Ok(Self {
            inner: EncodedMatrix {
                rows: n,
                cols: p,
                values,
                response,
                snp_ids: (0..p).collect(),
                truth: None,
            },
        })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| err(e.into()))?;
        let (inner, _) = data::read_csv(f).map_err(err)?;
        Ok(Self { inner })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| err(e.into()))?;
        data::write_csv(&self.inner, f).map_err(err)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    #[getter]
    fn response(&self) -> Vec<f64> {
        self.inner.response.clone()
    }

    #[getter]
    fn snp_ids(&self) -> Vec<usize> {
        self.inner.snp_ids.clone()
    }

    fn column(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.cols {
            return Err(PyValueError::new_err(format!("column {j} out of range")));
        }
        let n = self.inner.rows;
        Ok(self.inner.values[j * n..(j + 1) * n].to_vec())
    }

    /// Writes shard files and `manifest.json` into `dir`; returns the
    /// manifest as a dict.
    #[pyo3(signature = (dir, shards=3, proportions=None, seed=0))]
    fn write_federation<'py>(
        &self,
        py: Python<'py>,
        dir: PathBuf,
        shards: usize,
        proportions: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let parts = data::partition(&self.inner, shards, &proportions.unwrap_or_default(), seed).map_err(err)?;
        let m = data::write_federation(&dir, &parts, seed, self.inner.snp_ids.clone(), self.inner.truth.clone())
            .map_err(err)?;
        to_json(py, m.to_json().map_err(err)?)
    }

    /// Coordinate-descent reference solution at `lam` (KKT residual 1e-10).
    fn reference_solve(&self, lam: f64) -> PyResult<(Vec<f64>, f64, f64)> {
        let m = &self.inner;
        let s = solver::reference_solve(&m.values, m.rows, m.cols, &m.response, lam).map_err(err)?;
        Ok((s.x, s.objective, s.kkt_residual))
    }

    fn __repr__(&self) -> String {
        format!("Matrix(rows={}, cols={})", self.inner.rows, self.inner.cols)
    }
}

#[allow(clippy::large_enum_variant)]
enum Backend {
    Sim(Federation<SimTransport>),
    Socket(Federation<SocketTransport>),
}

macro_rules! with_fed {
    ($backend:expr, $fed:ident => $body:expr) => {
        match $backend {
            Backend::Sim($fed) => $body,
            Backend::Socket($fed) => $body,
        }
    };
}

fn sim_federation(shards: Vec<(FeatureShard, ResponseShard)>, p: usize) -> fedlasso::Result<Federation<SimTransport>> {
    let rows = shards.iter().map(|(a, _)| a.rows()).collect();
    let workers = shards
        .into_iter()
        .map(|(a, y)| Institution::new(a, y))
        .collect::<fedlasso::Result<Vec<_>>>()?;
    Federation::new(SimTransport::new(workers), fedlasso::FederationConfig::new(p, rows))
}

fn parse_screening(s: &str) -> PyResult<ScreeningRule> {
    match s {
        "none" => Ok(ScreeningRule::None),
        "safe" => Ok(ScreeningRule::Safe),
        "edpp" => Ok(ScreeningRule::Edpp),
        _ => Err(PyValueError::new_err(format!("screening must be none, safe or edpp, got {s:?}"))),
    }
}

fn solver_config(tolerance: f64, max_iters: usize, backtracking: bool, restart: bool) -> PyResult<SolverConfig> {
    let cfg = SolverConfig {
        tolerance,
        max_iters,
        step_rule: if backtracking {
            StepRule::Backtracking
        } else {
            StepRule::FixedLipschitz
        },
        restart,
        ..SolverConfig::default()
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// A coordinator plus its institutions. Institutions only ever return
/// aggregates; every solve goes through the message protocol.
#[pyclass(module = "fedlasso", unsendable)]
struct FederationHandle {
    backend: Backend,
}

#[pymethods]
impl FederationHandle {
    /// In-process federation from a matrix split row-wise.
    #[staticmethod]
    #[pyo3(signature = (matrix, shards=3, proportions=None, seed=0))]
    fn from_matrix(matrix: &Matrix, shards: usize, proportions: Option<Vec<f64>>, seed: u64) -> PyResult<Self> {
        let parts = data::partition(&matrix.inner, shards, &proportions.unwrap_or_default(), seed).map_err(err)?;
        Ok(Self {
            backend: Backend::Sim(sim_federation(parts, matrix.inner.cols).map_err(err)?),
        })
    }

    /// In-process federation from a manifest; shard digests are verified.
    #[staticmethod]
    fn from_manifest(path: PathBuf) -> PyResult<Self> {
        let m = ShardManifest::load(&path).map_err(err)?;
        let dir = path.parent().map(PathBuf::from).unwrap_or_default();
        let shards = m.load_shards(&dir).map_err(err)?;
        Ok(Self {
            backend: Backend::Sim(sim_federation(shards, m.feature_count).map_err(err)?),
        })
    }

    /// Federation over running `fedlasso worker` processes, in shard order.
    #[staticmethod]
    #[pyo3(signature = (manifest, endpoints, timeout_secs=30))]
    fn connect(manifest: PathBuf, endpoints: Vec<String>, timeout_secs: u64) -> PyResult<Self> {
        let m = ShardManifest::load(&manifest).map_err(err)?;
        let transport = SocketTransport::connect(&endpoints).map_err(err)?;
        let config = m.federation_config().with_timeout(Some(Duration::from_secs(timeout_secs)));
        Ok(Self {
            backend: Backend::Socket(Federation::new(transport, config).map_err(err)?),
        })
    }

    #[getter]
    fn feature_count(&self) -> usize {
        with_fed!(&self.backend, f => f.feature_count())
    }

    #[getter]
    fn worker_count(&self) -> usize {
        with_fed!(&self.backend, f => f.worker_count())
    }

    #[getter]
    fn shard_rows(&self) -> Vec<usize> {
        with_fed!(&self.backend, f => f.config().shard_rows.clone())
    }

    /// `(lambda_max, argmax)` from aggregated correlations.
    fn lambda_max(&mut self) -> PyResult<(f64, usize)> {
        let lm = with_fed!(&mut self.backend, f => compute_lambda_max(f)).map_err(err)?;
        Ok((lm.value, lm.argmax))
    }

    /// Centers and scales features and response on every institution.
    fn standardize(&mut self) -> PyResult<()> {
        with_fed!(&mut self.backend, f => pipeline::standardize(f)).map_err(err)
    }

    /// Single F-LQM solve over all features, from zero.
    #[pyo3(signature = (lam, tolerance=1e-9, max_iters=50_000, backtracking=false, restart=true))]
    fn solve(
        &mut self,
        lam: f64,
        tolerance: f64,
        max_iters: usize,
        backtracking: bool,
        restart: bool,
    ) -> PyResult<SolveOutcome> {
        let cfg = solver_config(tolerance, max_iters, backtracking, restart)?;
        let r = with_fed!(&mut self.backend, f => {
            let p = f.feature_count();
            let mask = DiscardMask::keep_all(lam, p, RuleOrigin::Unscreened);
            flqm_solve(f, lam, &mask, &SparseVector::zeros(p), &cfg)
        })
        .map_err(err)?;
        Ok(SolveOutcome {
            coef: r.x.to_dense(),
            lam: r.lambda,
            objective: r.objective,
            kkt_residual: r.kkt_residual,
            iters: r.iters_used,
            converged: r.converged,
        })
    }

    /// Screened, warm-started regularization path.
    #[pyo3(signature = (num_points=100, min_ratio=0.05, screening="edpp", tolerance=1e-9, max_iters=50_000, screen_gate=1e-6, backtracking=false, restart=true))]
    #[allow(clippy::too_many_arguments)]
    fn solve_path(
        &mut self,
        num_points: usize,
        min_ratio: f64,
        screening: &str,
        tolerance: f64,
        max_iters: usize,
        screen_gate: f64,
        backtracking: bool,
        restart: bool,
    ) -> PyResult<Path> {
        let config = PathConfig {
            screening: parse_screening(screening)?,
            solver: solver_config(tolerance, max_iters, backtracking, restart)?,
            screen_gate,
        };
        let settings = PathSettings { num_points, min_ratio };
        let run = with_fed!(&mut self.backend, f => pipeline::solve_path(f, settings, &config))
            .map_err(|a| err(a.into_error()))?;
        Ok(Path { run })
    }

    /// Stability selection over `rounds` subsamples of `subsample_size` rows.
    #[pyo3(signature = (rounds=50, subsample_size=350, seed=0, num_points=20, min_ratio=0.2, standardize=true, screening="edpp", tolerance=1e-9))]
    #[allow(clippy::too_many_arguments)]
    fn stability(
        &mut self,
        rounds: usize,
        subsample_size: usize,
        seed: u64,
        num_points: usize,
        min_ratio: f64,
        standardize: bool,
        screening: &str,
        tolerance: f64,
    ) -> PyResult<Stability> {
        let cfg = StabilityConfig {
            rounds,
            subsample_size,
            seed,
            path: PathSettings { num_points, min_ratio },
            standardize,
        };
        let path_cfg = PathConfig {
            screening: parse_screening(screening)?,
            solver: solver_config(tolerance, 50_000, false, true)?,
            ..PathConfig::default()
        };
        let profile = with_fed!(&mut self.backend, f => pipeline::stability_select(f, &cfg, &path_cfg)).map_err(err)?;
        Ok(Stability { profile })
    }

    /// Start recording every protocol message (metadata only).
    fn record_transcript(&mut self) {
        with_fed!(&mut self.backend, f => f.record_transcript())
    }

    /// Audits the recorded transcript and returns the report as a dict.
    fn audit<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let t = with_fed!(&mut self.backend, f => f.transcript().cloned())
            .ok_or_else(|| FedlassoError::new_err("no transcript recorded; call record_transcript() first"))?;
        audit_json(py, &t)
    }

    /// Writes the recorded transcript as JSON lines.
    fn write_transcript(&mut self, path: PathBuf) -> PyResult<()> {
        let t = with_fed!(&mut self.backend, f => f.transcript().cloned())
            .ok_or_else(|| FedlassoError::new_err("no transcript recorded"))?;
        let file = std::fs::File::create(&path).map_err(|e| err(e.into()))?;
        t.write_jsonl(std::io::BufWriter::new(file)).map_err(err)
    }

    /// Column evaluations performed by the institutions so far.
    fn work(&mut self) -> PyResult<u64> {
        with_fed!(&mut self.backend, f => f.work()).map_err(err)
    }

    /// Asks every institution to stop serving.
    fn shutdown(&mut self) -> PyResult<()> {
        with_fed!(&mut self.backend, f => f.shutdown()).map_err(err)
    }
}

fn audit_json<'py>(py: Python<'py>, t: &Transcript) -> PyResult<Bound<'py, PyAny>> {
    let report = privacy_audit(t);
    to_json(py, serde_json::to_string(&report).expect("report serializes"))
}

/// Audits a transcript file written by `write_transcript` or the CLI.
#[pyfunction]
fn audit_transcript(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let f = std::fs::File::open(&path).map_err(|e| err(e.into()))?;
    let t = Transcript::read_jsonl(std::io::BufReader::new(f)).map_err(err)?;
    audit_json(py, &t)
}

#[pyclass(module = "fedlasso", get_all)]
struct SolveOutcome {
    coef: Vec<f64>,
    lam: f64,
    objective: f64,
    kkt_residual: f64,
    iters: usize,
    converged: bool,
}

#[pyclass(module = "fedlasso")]
struct Path {
    run: PathRun,
}

#[pymethods]
impl Path {
    #[getter]
    fn lambda_max(&self) -> f64 {
        self.run.path.lambda_max
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.run.steps.iter().map(|s| s.lambda).collect()
    }

    #[getter]
    fn ratios(&self) -> Vec<f64> {
        self.run.steps.iter().map(|s| s.ratio).collect()
    }

    #[getter]
    fn objectives(&self) -> Vec<f64> {
        self.run.steps.iter().map(|s| s.result.objective).collect()
    }

    #[getter]
    fn kkt_residuals(&self) -> Vec<f64> {
        self.run.steps.iter().map(|s| s.kkt_residual).collect()
    }

    #[getter]
    fn kept_counts(&self) -> Vec<usize> {
        self.run.steps.iter().map(|s| s.kept_count()).collect()
    }

    #[getter]
    fn rejection_fractions(&self) -> Vec<f64> {
        self.run.steps.iter().map(|s| s.rejection_fraction()).collect()
    }

    #[getter]
    fn iters(&self) -> Vec<usize> {
        self.run.steps.iter().map(|s| s.result.iters_used).collect()
    }

    #[getter]
    fn work(&self) -> Option<u64> {
        self.run.total_work()
    }

    /// Dense coefficients at path point `k`.
    fn coef(&self, k: usize) -> PyResult<Vec<f64>> {
        self.run
            .steps
            .get(k)
            .map(|s| s.result.x.to_dense())
            .ok_or_else(|| PyValueError::new_err(format!("path has {} points", self.run.steps.len())))
    }

    /// The path report in the CLI's CSV format (without the header comment).
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.run.write_csv(&mut buf).map_err(err)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    fn __len__(&self) -> usize {
        self.run.steps.len()
    }
}

#[pyclass(module = "fedlasso")]
struct Stability {
    profile: StabilityProfile,
}

#[pymethods]
impl Stability {
    #[getter]
    fn counts(&self) -> Vec<u32> {
        self.profile.counts.clone()
    }

    #[getter]
    fn ranking(&self) -> Vec<usize> {
        self.profile.ranking.clone()
    }

    #[getter]
    fn per_lambda(&self) -> Vec<Vec<u32>> {
        self.profile.per_lambda.clone()
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.profile.rounds
    }

    fn top(&self, k: usize) -> Vec<usize> {
        self.profile.top(k).to_vec()
    }

    fn frequency(&self, j: usize) -> PyResult<f64> {
        if j >= self.profile.counts.len() {
            return Err(PyValueError::new_err(format!("feature {j} out of range")));
        }
        Ok(self.profile.frequency(j))
    }
}

/// `lambda_max * ratio` for linearly spaced ratios from 1 to `min_ratio`.
#[pyfunction]
fn build_path(lambda_max: f64, num_points: usize, min_ratio: f64) -> PyResult<Vec<f64>> {
    Ok(pipeline::build_path(lambda_max, num_points, min_ratio).map_err(err)?.values)
}

#[pyfunction]
fn soft_threshold(v: f64, alpha: f64) -> PyResult<f64> {
    if !(alpha >= 0.0) {
        return Err(PyValueError::new_err("alpha must be non-negative"));
    }
    Ok(solver::soft_threshold(v, alpha))
}

#[pymodule(name = "fedlasso")]
pub fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FedlassoError", m.py().get_type::<FedlassoError>())?;
    m.add_class::<Genotypes>()?;
    m.add_class::<Matrix>()?;
    m.add_class::<FederationHandle>()?;
    m.add("Federation", m.py().get_type::<FederationHandle>())?;
    m.add_class::<SolveOutcome>()?;
    m.add_class::<Path>()?;
    m.add_class::<Stability>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(build_path, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(audit_transcript, m)?)?;
    Ok(())
}
