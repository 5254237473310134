use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for a missing genotype call.
pub const MISSING: u8 = 255;

/// Planted model of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Indices into the dataset's SNP columns.
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub noise_sd: f64,
}

/// Additively coded genotypes (0, 1, 2 copies of the minor allele) plus a
/// response, SNP-major: `genotypes[j * subjects + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeDataset {
    pub subjects: usize,
    pub snps: usize,
    pub genotypes: Vec<u8>,
    pub response: Vec<f64>,
    /// Original SNP id of each column (survives filtering).
    pub snp_ids: Vec<usize>,
    pub truth: Option<Truth>,
}

impl GenotypeDataset {
    pub fn new(subjects: usize, snps: usize, genotypes: Vec<u8>, response: Vec<f64>) -> Result<Self> {
        if genotypes.len() != subjects * snps || response.len() != subjects {
            return Err(Error::Dimension(format!(
                "{} codes and {} responses for {subjects} subjects x {snps} SNPs",
                genotypes.len(),
                response.len()
            )));
        }
        if let Some(c) = genotypes.iter().find(|&&c| c > 2 && c != MISSING) {
            return Err(Error::Format(format!("invalid genotype code {c}")));
        }
        Ok(Self {
            subjects,
            snps,
            genotypes,
            response,
            snp_ids: (0..snps).collect(),
            truth: None,
        })
    }

    pub fn snp(&self, j: usize) -> &[u8] {
        &self.genotypes[j * self.subjects..(j + 1) * self.subjects]
    }

    /// Alternate-allele frequency over observed calls; `None` if all missing.
    pub fn allele_frequency(&self, j: usize) -> Option<f64> {
        let (sum, n) = self
            .snp(j)
            .iter()
            .filter(|&&c| c != MISSING)
            .fold((0u64, 0u64), |(s, n), &c| (s + c as u64, n + 1));
        (n > 0).then(|| sum as f64 / (2 * n) as f64)
    }

    pub fn minor_allele_frequency(&self, j: usize) -> Option<f64> {
        self.allele_frequency(j).map(|f| f.min(1.0 - f))
    }

    /// Keeps the listed columns (in order), remapping the planted support.
    pub fn select_snps(&self, cols: &[usize]) -> GenotypeDataset {
        let mut genotypes = Vec::with_capacity(cols.len() * self.subjects);
        for &j in cols {
            genotypes.extend_from_slice(self.snp(j));
        }
        let truth = self.truth.as_ref().map(|t| {
            let mut support = Vec::new();
            let mut coefficients = Vec::new();
            for (new, &old) in cols.iter().enumerate() {
                if let Some(pos) = t.support.iter().position(|&s| s == old) {
                    support.push(new);
                    coefficients.push(t.coefficients[pos]);
                }
            }
            Truth {
                support,
                coefficients,
                noise_sd: t.noise_sd,
            }
        });
        GenotypeDataset {
            subjects: self.subjects,
            snps: cols.len(),
            genotypes,
            response: self.response.clone(),
            snp_ids: cols.iter().map(|&j| self.snp_ids[j]).collect(),
            truth,
        }
    }

    /// Marks entries rejected by `keep(subject, snp)` as missing (hook for
    /// per-call quality scores).
    pub fn apply_entry_mask<F: Fn(usize, usize) -> bool>(&mut self, keep: F) {
        for j in 0..self.snps {
            for i in 0..self.subjects {
                if !keep(i, j) {
                    self.genotypes[j * self.subjects + i] = MISSING;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub snps: usize,
    pub support_size: usize,
    /// Signal variance over noise variance; infinite means no noise.
    pub snr: f64,
    pub maf_range: (f64, f64),
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subjects: 500,
            snps: 1000,
            support_size: 10,
            snr: 10.0,
            maf_range: (0.05, 0.5),
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

/// Hardy-Weinberg genotypes with a planted sparse linear response
/// `y = sum_j beta_j (g_j - 2 f_j) + noise`, `beta_j = +-1`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<GenotypeDataset> {
    let (lo, hi) = cfg.maf_range;
    if cfg.subjects == 0 || cfg.snps == 0 {
        return Err(Error::Config("need at least one subject and one SNP".into()));
    }
    if cfg.support_size > cfg.snps {
        return Err(Error::Config(format!(
            "support size {} exceeds {} SNPs",
            cfg.support_size, cfg.snps
        )));
    }
    if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
        return Err(Error::Config(format!("MAF range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 0.5")));
    }
    if !(cfg.snr > 0.0) {
        return Err(Error::Config(format!("SNR must be positive, got {}", cfg.snr)));
    }
    if !(0.0..1.0).contains(&cfg.missing_rate) {
        return Err(Error::Config(format!("missing rate {} outside [0, 1)", cfg.missing_rate)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, p) = (cfg.subjects, cfg.snps);
    let mut freqs = Vec::with_capacity(p);
    let mut genotypes = Vec::with_capacity(n * p);
    for _ in 0..p {
        let f = if lo == hi { lo } else { rng.random_range(lo..hi) };
        freqs.push(f);
        for _ in 0..n {
            let c = u8::from(rng.random_bool(f)) + u8::from(rng.random_bool(f));
            genotypes.push(c);
        }
    }

    let mut support = rand::seq::index::sample(&mut rng, p, cfg.support_size).into_vec();
    support.sort_unstable();
    let coefficients: Vec<f64> = support
        .iter()
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let mut signal = vec![0.0; n];
    for (&j, &b) in support.iter().zip(&coefficients) {
        let centre = 2.0 * freqs[j];
        for (i, s) in signal.iter_mut().enumerate() {
            *s += b * (genotypes[j * n + i] as f64 - centre);
        }
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    let noise_sd = if cfg.snr.is_infinite() {
        0.0
    } else if var > 0.0 {
        (var / cfg.snr).sqrt()
    } else {
        1.0
    };
    let response: Vec<f64> = if noise_sd > 0.0 {
        let normal = Normal::new(0.0, noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        signal.iter().map(|s| s + normal.sample(&mut rng)).collect()
    } else {
        signal
    };

    if cfg.missing_rate > 0.0 {
        for g in genotypes.iter_mut() {
            if rng.random_bool(cfg.missing_rate) {
                *g = MISSING;
            }
        }
    }

    let mut ds = GenotypeDataset::new(n, p, genotypes, response)?;
    ds.truth = Some(Truth {
        support,
        coefficients,
        noise_sd,
    });
    Ok(ds)
}

/// Drops SNPs whose minor allele frequency is below `threshold`. SNPs with
/// no observed calls are dropped too.
pub fn maf_filter(ds: &GenotypeDataset, threshold: f64) -> Result<(GenotypeDataset, Vec<usize>)> {
    if !(threshold > 0.0 && threshold <= 0.5) {
        return Err(Error::Config(format!("MAF threshold {threshold} outside (0, 0.5]")));
    }
    let kept: Vec<usize> = (0..ds.snps)
        .filter(|&j| ds.minor_allele_frequency(j).is_some_and(|m| m >= threshold))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("no SNP passes MAF >= {threshold}")));
    }
    let out = ds.select_snps(&kept);
    let ids = out.snp_ids.clone();
    Ok((out, ids))
}

/// Dense column-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub response: Vec<f64>,
    pub snp_ids: Vec<usize>,
    pub truth: Option<Truth>,
}

/// Codes as floats with missing calls replaced by the SNP's observed mean.
/// SNPs with no observed call are removed.
pub fn impute_and_encode(ds: &GenotypeDataset) -> Result<EncodedMatrix> {
    let mut keep = Vec::with_capacity(ds.snps);
    for j in 0..ds.snps {
        if ds.allele_frequency(j).is_some() {
            keep.push(j);
        } else {
            warn!("SNP {} has no observed calls; removed", ds.snp_ids[j]);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyDataset("every SNP is entirely missing".into()));
    }
    let ds = if keep.len() == ds.snps {
        ds.clone()
    } else {
        ds.select_snps(&keep)
    };
    let n = ds.subjects;
    let mut values = Vec::with_capacity(n * ds.snps);
    for j in 0..ds.snps {
        let col = ds.snp(j);
        let (sum, cnt) = col
            .iter()
            .filter(|&&c| c != MISSING)
            .fold((0.0, 0usize), |(s, k), &c| (s + c as f64, k + 1));
        let mean = sum / cnt as f64;
        values.extend(col.iter().map(|&c| if c == MISSING { mean } else { c as f64 }));
    }
    Ok(EncodedMatrix {
        rows: n,
        cols: ds.snps,
        values,
        response: ds.response.clone(),
        snp_ids: ds.snp_ids.clone(),
        truth: ds.truth.clone(),
    })
}
