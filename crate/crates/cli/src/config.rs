use std::path::Path;

use fedlasso::data::sha256_hex;
use fedlasso::pipeline::{PathConfig, PathSettings, ScreeningRule, StabilityConfig};
use fedlasso::solver::{SolverConfig, StepRule};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Optional settings read from a TOML file. Command-line flags take
/// precedence over every key here.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    // gen
    pub subjects: Option<usize>,
    pub snps: Option<usize>,
    pub support_size: Option<usize>,
    pub snr: Option<f64>,
    pub maf_min: Option<f64>,
    pub maf_max: Option<f64>,
    pub missing_rate: Option<f64>,
    pub maf_threshold: Option<f64>,
    pub shards: Option<usize>,
    pub proportions: Option<Vec<f64>>,
    // federation
    pub transport: Option<Transport>,
    pub endpoints: Option<Vec<String>>,
    pub timeout_secs: Option<u64>,
    // path
    pub num_points: Option<usize>,
    pub min_ratio: Option<f64>,
    pub screening: Option<ScreeningRule>,
    pub screen_gate: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iters: Option<usize>,
    pub step_rule: Option<StepRule>,
    pub restart: Option<bool>,
    pub standardize: Option<bool>,
    // stability
    pub rounds: Option<usize>,
    pub subsample_size: Option<usize>,
    pub top: Option<usize>,
    // bench
    pub features: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Sim,
    Socket,
}

/// Flags shared by every solving command.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SolveFlags {
    /// Transport to the institutions.
    #[arg(long, value_enum)]
    pub transport: Option<Transport>,
    /// Worker addresses in shard order (socket transport).
    #[arg(long, value_delimiter = ',')]
    pub endpoints: Option<Vec<String>>,
    /// Per-round timeout in seconds (socket transport).
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub num_points: Option<usize>,
    #[arg(long)]
    pub min_ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub screening: Option<ScreeningArg>,
    /// Same as `--screening none`.
    #[arg(long)]
    pub no_screening: bool,
    #[arg(long)]
    pub screen_gate: Option<f64>,
    /// KKT residual at which a solve is accepted.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub step_rule: Option<StepArg>,
    /// Disable adaptive momentum restart.
    #[arg(long)]
    pub no_restart: bool,
    /// Center and scale features and response before solving.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScreeningArg {
    None,
    Safe,
    Edpp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StepArg {
    Fixed,
    Backtracking,
}

/// Everything that determines a solve's numeric output. Paths and the
/// transport are left out so sim and socket runs share a digest.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub federation_id: String,
    pub seed: u64,
    pub settings: PathSettings,
    pub path: PathConfig,
    pub standardize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(skip)]
    pub transport: Transport,
    #[serde(skip)]
    pub endpoints: Vec<String>,
    #[serde(skip)]
    pub timeout_secs: u64,
}

impl Resolved {
    pub fn new(flags: &SolveFlags, file: &FileConfig, federation_id: &str) -> Result<Self, CliError> {
        let screening = if flags.no_screening {
            ScreeningRule::None
        } else {
            match flags.screening {
                Some(ScreeningArg::None) => ScreeningRule::None,
                Some(ScreeningArg::Safe) => ScreeningRule::Safe,
                Some(ScreeningArg::Edpp) => ScreeningRule::Edpp,
                None => file.screening.unwrap_or(ScreeningRule::Edpp),
            }
        };
        let step_rule = match flags.step_rule {
            Some(StepArg::Fixed) => StepRule::FixedLipschitz,
            Some(StepArg::Backtracking) => StepRule::Backtracking,
            None => file.step_rule.unwrap_or(StepRule::FixedLipschitz),
        };
        let defaults = PathConfig::default();
        let solver = SolverConfig {
            tolerance: flags.tolerance.or(file.tolerance).unwrap_or(defaults.solver.tolerance),
            max_iters: flags.max_iters.or(file.max_iters).unwrap_or(defaults.solver.max_iters),
            step_rule,
            restart: !flags.no_restart && file.restart.unwrap_or(true),
            ..defaults.solver.clone()
        };
        solver.validate()?;
        let settings = PathSettings {
            num_points: flags.num_points.or(file.num_points).unwrap_or(100),
            min_ratio: flags.min_ratio.or(file.min_ratio).unwrap_or(0.05),
        };
        let transport = flags.transport.or(file.transport).unwrap_or(Transport::Sim);
        let endpoints = flags.endpoints.clone().or(file.endpoints.clone()).unwrap_or_default();
        if transport == Transport::Socket && endpoints.is_empty() {
            return Err(CliError::Config("socket transport needs --endpoints".into()));
        }
        Ok(Self {
            federation_id: federation_id.to_owned(),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            settings,
            path: PathConfig {
                screening,
                solver,
                screen_gate: flags.screen_gate.or(file.screen_gate).unwrap_or(defaults.screen_gate),
            },
            standardize: flags.standardize || file.standardize.unwrap_or(false),
            stability: None,
            transport,
            endpoints,
            timeout_secs: flags.timeout_secs.or(file.timeout_secs).unwrap_or(30),
        })
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())
    }

    /// First line of every output file.
    pub fn header_line(&self) -> String {
        format!("# seed={} config=sha256:{}", self.seed, self.digest())
    }
}
