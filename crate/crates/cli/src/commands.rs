use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use fedlasso::data::{
    gen_synthetic, impute_and_encode, maf_filter, partition, read_csv, read_shard, write_federation,
    ShardManifest, SyntheticConfig,
};
use fedlasso::pipeline::{
    compare_screening, solve_path_on, stability_select, standardize, FederatedBackend, PathRun,
    ScreeningComparison, StabilityConfig,
};
use fedlasso::protocol::{
    privacy_audit, serve_worker, Federation, Institution, SimTransport, SocketTransport, Transcript,
    Transport,
};
use fedlasso::{FeatureShard, ResponseShard};
use log::info;

use crate::config::{FileConfig, Resolved, SolveFlags, Transport as TransportKind};
use crate::CliError;

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    /// Output directory for shard files and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Import `subject_id,feature_0,...,response` instead of synthesizing.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub snps: Option<usize>,
    #[arg(long)]
    pub support_size: Option<usize>,
    /// Signal-to-noise variance ratio; `inf` for a noiseless response.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub maf_min: Option<f64>,
    #[arg(long)]
    pub maf_max: Option<f64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    /// QC threshold on minor allele frequency.
    #[arg(long)]
    pub maf_threshold: Option<f64>,
    #[arg(long)]
    pub shards: Option<usize>,
    /// Row shares per shard, e.g. `0.4547,0.2999,0.2454`.
    #[arg(long, value_delimiter = ',')]
    pub proportions: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn gen(args: &GenArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let shards = args.shards.or(file.shards).unwrap_or(3);
    let proportions = args.proportions.clone().or(file.proportions.clone()).unwrap_or_default();
    let matrix = match &args.csv {
        Some(path) => {
            let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            read_csv(BufReader::new(f))?.0
        }
        None => {
            let defaults = SyntheticConfig::default();
            let cfg = SyntheticConfig {
                subjects: args.subjects.or(file.subjects).unwrap_or(defaults.subjects),
                snps: args.snps.or(file.snps).unwrap_or(defaults.snps),
                support_size: args.support_size.or(file.support_size).unwrap_or(defaults.support_size),
                snr: args.snr.or(file.snr).unwrap_or(defaults.snr),
                maf_range: (
                    args.maf_min.or(file.maf_min).unwrap_or(defaults.maf_range.0),
                    args.maf_max.or(file.maf_max).unwrap_or(defaults.maf_range.1),
                ),
                missing_rate: args.missing_rate.or(file.missing_rate).unwrap_or(defaults.missing_rate),
                seed,
            };
            let ds = gen_synthetic(&cfg)?;
            let threshold = args.maf_threshold.or(file.maf_threshold).unwrap_or(0.05);
            let (ds, kept) = maf_filter(&ds, threshold)?;
            info!("QC kept {} of {} SNPs", kept.len(), cfg.snps);
            impute_and_encode(&ds)?
        }
    };
    let parts = partition(&matrix, shards, &proportions, seed)?;
    let manifest = write_federation(&args.out, &parts, seed, matrix.snp_ids.clone(), matrix.truth.clone())?;
    writeln!(io::stdout().lock(), "{}", manifest.to_json()?)?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct WorkerArgs {
    /// Shard file to serve.
    #[arg(long)]
    pub shard: PathBuf,
    /// Address to bind; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub listen: String,
    /// Check the shard against this manifest entry before serving.
    #[arg(long, requires = "index")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
}

pub fn worker(args: &WorkerArgs) -> Result<(), CliError> {
    let (a, y) = match (&args.manifest, args.index) {
        (Some(m), Some(k)) => {
            let manifest = ShardManifest::load(m)?;
            let dir = m.parent().unwrap_or(Path::new("."));
            manifest.load_shard(dir, k)?
        }
        _ => read_shard(&args.shard)?,
    };
    let listener = TcpListener::bind(&args.listen)?;
    let mut out = io::stdout();
    writeln!(out, "listening on {}", listener.local_addr()?)?;
    out.flush()?;
    serve_worker(listener, Institution::new(a, y)?)?;
    Ok(())
}

fn load_manifest(path: &Path) -> Result<(ShardManifest, PathBuf), CliError> {
    let manifest = ShardManifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((manifest, dir))
}

/// Work that runs against a federation of either transport.
trait FedJob {
    fn run<T: Transport>(self, fed: &mut Federation<T>) -> Result<(), CliError>;
}

fn dispatch<J: FedJob>(
    manifest: &ShardManifest,
    dir: &Path,
    res: &Resolved,
    shutdown: bool,
    job: J,
) -> Result<(), CliError> {
    let config = manifest.federation_config();
    match res.transport {
        TransportKind::Sim => {
            let workers = manifest
                .load_shards(dir)?
                .into_iter()
                .map(|(a, y)| Institution::new(a, y))
                .collect::<fedlasso::Result<Vec<_>>>()?;
            let mut fed = Federation::new(SimTransport::new(workers), config)?;
            job.run(&mut fed)
        }
        TransportKind::Socket => {
            if res.endpoints.len() != manifest.shards.len() {
                return Err(CliError::Config(format!(
                    "{} endpoints for {} shards",
                    res.endpoints.len(),
                    manifest.shards.len()
                )));
            }
            let transport = SocketTransport::connect(&res.endpoints)?;
            let config = config.with_timeout(Some(Duration::from_secs(res.timeout_secs)));
            let mut fed = Federation::new(transport, config)?;
            let out = job.run(&mut fed);
            if shutdown {
                fed.shutdown()?;
            }
            out
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_transcript(path: Option<&Path>, t: Option<Transcript>) -> Result<(), CliError> {
    if let (Some(path), Some(t)) = (path, t) {
        let mut w = create(path)?;
        t.write_jsonl(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

struct PathJob<'a> {
    res: &'a Resolved,
    out: &'a Path,
    timing: Option<&'a Path>,
    transcript: Option<&'a Path>,
}

impl FedJob for PathJob<'_> {
    fn run<T: Transport>(self, fed: &mut Federation<T>) -> Result<(), CliError> {
        if self.transcript.is_some() {
            fed.record_transcript();
        }
        if self.res.standardize {
            standardize(fed)?;
        }
        let mut w = create(self.out)?;
        writeln!(w, "{}", self.res.header_line())?;
        writeln!(w, "{}", PathRun::CSV_HEADER)?;
        w.flush()?;
        let mut write_err = None;
        let outcome = solve_path_on(
            &mut FederatedBackend::new(fed),
            self.res.settings,
            &self.res.path,
            &mut |step| {
                let r = writeln!(w, "{}", PathRun::csv_row(step)).and_then(|_| w.flush());
                if let Err(e) = r {
                    write_err.get_or_insert(e);
                }
            },
        );
        if let Some(e) = write_err {
            return Err(e.into());
        }
        let run = match outcome {
            Ok(run) => run,
            Err(abort) => {
                eprintln!("path aborted at step {}; {} steps written", abort.step, abort.partial.steps.len());
                if let Some(t) = self.timing {
                    abort.partial.write_timing_csv(create(t)?)?;
                }
                write_transcript(self.transcript, fed.take_transcript())?;
                return Err(abort.into_error().into());
            }
        };
        if let Some(t) = self.timing {
            let mut tw = create(t)?;
            run.write_timing_csv(&mut tw)?;
            tw.flush()?;
        }
        write_transcript(self.transcript, fed.take_transcript())?;
        let last = run.steps.last().expect("path has a first step");
        info!(
            "{} steps, mean rejection {:.4}, final objective {:?}",
            run.steps.len(),
            run.mean_rejection(),
            last.result.objective
        );
        Ok(())
    }
}

pub fn path(
    manifest_path: &Path,
    out: &Path,
    timing: Option<&Path>,
    transcript: Option<&Path>,
    shutdown: bool,
    flags: &SolveFlags,
    file: &FileConfig,
) -> Result<(), CliError> {
    let (manifest, dir) = load_manifest(manifest_path)?;
    let res = Resolved::new(flags, file, &manifest.federation_id)?;
    dispatch(
        &manifest,
        &dir,
        &res,
        shutdown,
        PathJob {
            res: &res,
            out,
            timing,
            transcript,
        },
    )
}

fn leading_columns(shards: &[(FeatureShard, ResponseShard)], k: usize) -> fedlasso::Result<Vec<(FeatureShard, ResponseShard)>> {
    shards
        .iter()
        .map(|(a, y)| {
            let cut = FeatureShard::new(a.shard_id(), a.rows(), k, a.values()[..a.rows() * k].to_vec())?
                .with_row_ids(a.row_ids().to_vec())?;
            Ok((cut, y.clone()))
        })
        .collect()
}

pub fn bench(
    manifest_path: &Path,
    out: &Path,
    features: Option<Vec<usize>>,
    flags: &SolveFlags,
    file: &FileConfig,
) -> Result<(), CliError> {
    let (manifest, dir) = load_manifest(manifest_path)?;
    let res = Resolved::new(flags, file, &manifest.federation_id)?;
    if res.transport != TransportKind::Sim {
        return Err(CliError::Config("bench runs in-process; use --transport sim".into()));
    }
    let p = manifest.feature_count;
    let counts = features.or(file.features.clone()).unwrap_or_else(|| vec![p]);
    if let Some(&k) = counts.iter().find(|&&k| k == 0 || k > p) {
        return Err(CliError::Config(format!("feature count {k} outside 1..={p}")));
    }
    let shards = manifest.load_shards(&dir)?;
    let mut w = create(out)?;
    writeln!(w, "{}", res.header_line())?;
    writeln!(w, "{}", ScreeningComparison::CSV_HEADER)?;
    for k in counts {
        let cut = leading_columns(&shards, k)?;
        let workers = cut
            .into_iter()
            .map(|(a, y)| Institution::new(a, y))
            .collect::<fedlasso::Result<Vec<_>>>()?;
        let config = fedlasso::FederationConfig::new(k, manifest.shard_rows());
        let mut fed = Federation::new(SimTransport::new(workers), config)?;
        if res.standardize {
            standardize(&mut fed)?;
        }
        let cmp = compare_screening(&mut fed, res.settings, &res.path)?;
        writeln!(w, "{}", cmp.csv_row())?;
        w.flush()?;
        writeln!(
            io::stdout().lock(),
            "p = {k}: screened {:.3}s, unscreened {:.3}s, speedup {:.2}, mean rejection {:.4}",
            cmp.time_screened().as_secs_f64(),
            cmp.time_unscreened().as_secs_f64(),
            cmp.speedup(),
            cmp.mean_rejection()
        )?;
    }
    Ok(())
}

pub struct StabilityArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub per_lambda: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub rounds: Option<usize>,
    pub subsample_size: Option<usize>,
    pub top: Option<usize>,
    pub shutdown_workers: bool,
}

struct StabilityJob<'a> {
    res: &'a Resolved,
    args: &'a StabilityArgs,
    snp_ids: &'a [usize],
    top: usize,
}

impl FedJob for StabilityJob<'_> {
    fn run<T: Transport>(self, fed: &mut Federation<T>) -> Result<(), CliError> {
        if self.args.transcript.is_some() {
            fed.record_transcript();
        }
        let cfg = self.res.stability.as_ref().expect("stability settings resolved");
        let profile = stability_select(fed, cfg, &self.res.path)?;
        write_transcript(self.args.transcript.as_deref(), fed.take_transcript())?;

        let mut w = create(&self.args.out)?;
        writeln!(w, "{}", self.res.header_line())?;
        profile.write_csv(&mut w)?;
        w.flush()?;
        if let Some(path) = &self.args.per_lambda {
            let mut w = create(path)?;
            writeln!(w, "{}", self.res.header_line())?;
            profile.write_per_lambda_csv(&mut w)?;
            w.flush()?;
        }
        let mut out = io::stdout().lock();
        writeln!(out, "rank,feature_id,snp_id,count,frequency")?;
        for (rank, &j) in profile.top(self.top).iter().enumerate() {
            let snp = self.snp_ids.get(j).copied().unwrap_or(j);
            writeln!(out, "{},{j},{snp},{},{:?}", rank + 1, profile.counts[j], profile.frequency(j))?;
        }
        Ok(())
    }
}

pub fn stability(args: &StabilityArgs, flags: &SolveFlags, file: &FileConfig) -> Result<(), CliError> {
    let (manifest, dir) = load_manifest(&args.manifest)?;
    let mut res = Resolved::new(flags, file, &manifest.federation_id)?;
    let default_size = manifest.total_rows * 7 / 10;
    res.stability = Some(StabilityConfig {
        rounds: args.rounds.or(file.rounds).unwrap_or(50),
        subsample_size: args.subsample_size.or(file.subsample_size).unwrap_or(default_size.max(1)),
        seed: res.seed,
        path: res.settings,
        standardize: res.standardize,
    });
    let top = args.top.or(file.top).unwrap_or(10);
    dispatch(
        &manifest,
        &dir,
        &res,
        args.shutdown_workers,
        StabilityJob {
            res: &res,
            args,
            snp_ids: &manifest.snp_ids,
            top,
        },
    )
}

pub fn audit(path: &Path) -> Result<(), CliError> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let transcript = Transcript::read_jsonl(BufReader::new(f))?;
    let report = privacy_audit(&transcript);
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(io::stdout().lock(), "{json}")?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Audit(report.violations.len()))
    }
}
